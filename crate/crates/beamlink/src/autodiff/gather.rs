//! Fixed sparse linear maps over the leading axis, used for pilot-grid
//! interpolation. The plan is built once per (grid, pattern) and shared.

use super::tensor::Real;

/// out[dst] += w * in[src], rows carrying an arbitrary feature payload.
#[derive(Debug, Clone)]
pub struct GatherPlan {
    pub in_rows: usize,
    pub out_rows: usize,
    terms: Vec<(u32, u32, f64)>,
}

impl GatherPlan {
    pub fn new(in_rows: usize, out_rows: usize) -> Self {
        GatherPlan {
            in_rows,
            out_rows,
            terms: Vec::new(),
        }
    }

    pub fn push(&mut self, dst: usize, src: usize, weight: f64) {
        debug_assert!(dst < self.out_rows && src < self.in_rows);
        if weight != 0.0 {
            self.terms.push((dst as u32, src as u32, weight));
        }
    }

    pub fn apply_forward<R: Real>(&self, x: &[R], out: &mut [R], row: usize) {
        for &(dst, src, w) in &self.terms {
            let w = R::from_f64_lossy(w);
            let d = dst as usize * row;
            let s = src as usize * row;
            for t in 0..row {
                out[d + t] += w * x[s + t];
            }
        }
    }

    pub fn apply_backward<R: Real>(&self, g: &[R], gx: &mut [R], row: usize) {
        for &(dst, src, w) in &self.terms {
            let w = R::from_f64_lossy(w);
            let d = dst as usize * row;
            let s = src as usize * row;
            for t in 0..row {
                gx[s + t] += w * g[d + t];
            }
        }
    }
}
