//! Learning-rate schedule: linear warmup, constant plateau, linear decay to
//! zero at the final iteration.

#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_iterations: usize,
    /// Fraction of total iterations after which the linear decay starts.
    pub decay_start_frac: f64,
    pub total_iterations: usize,
}

impl LrSchedule {
    pub fn at(&self, iteration: usize) -> f64 {
        if self.total_iterations == 0 {
            return self.base_lr;
        }
        if iteration < self.warmup_iterations {
            return self.base_lr * iteration as f64 / self.warmup_iterations as f64;
        }
        let decay_start =
            (self.decay_start_frac * self.total_iterations as f64).round() as usize;
        if iteration <= decay_start {
            return self.base_lr;
        }
        let span = (self.total_iterations - decay_start) as f64;
        let left = (self.total_iterations.saturating_sub(iteration)) as f64;
        self.base_lr * (left / span).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> LrSchedule {
        LrSchedule {
            base_lr: 3.6e-5,
            warmup_iterations: 1600,
            decay_start_frac: 0.3,
            total_iterations: 20_000,
        }
    }

    #[test]
    fn warmup_midpoint() {
        let s = reference();
        assert!((s.at(800) - 1.8e-5).abs() < 1e-18);
    }

    #[test]
    fn plateau_and_decay() {
        let s = reference();
        assert_eq!(s.at(6000), 3.6e-5); // decay start = 6000
        assert_eq!(s.at(20_000), 0.0);
        let mid = s.at(13_000);
        assert!(mid < 3.6e-5 && mid > 0.0);
        // decay is linear
        let q = s.at(6000 + 7000);
        assert!((q - 3.6e-5 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn monotone_segments() {
        let s = reference();
        let mut prev = -1.0;
        for it in 0..1600 {
            let v = s.at(it);
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for it in 6000..=20_000 {
            let v = s.at(it);
            assert!(v <= prev);
            prev = v;
        }
    }
}
