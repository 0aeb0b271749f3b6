//! Predictor architecture descriptions and derived quantities
//! (parameter counts, receptive fields, multiply counts).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    /// Output channel width.
    pub channels: usize,
    /// Depthwise filter size (time, frequency).
    pub filter: (usize, usize),
    /// Dilation (time, frequency).
    pub dilation: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DilationProfile {
    /// Ramp 1 -> 5 and back (the reference layout).
    Full,
    /// Capped at (2, 3).
    Short,
    /// All ones.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_rx: usize,
    pub n_tx: usize,
    /// Number of stacked UL slots in the input (1..=3).
    pub history: usize,
    pub tau_max: usize,
    /// Width after the 1x1 input convolution.
    pub conv_in_channels: usize,
    pub blocks: Vec<BlockSpec>,
    /// Weight of the squared-activation penalty on the network output.
    pub l2_penalty: f64,
}

impl ModelConfig {
    /// The reference 11-block architecture (128/256 widths, dilations up to
    /// (3, 5)), about 0.96M parameters at 4x2.
    pub fn table_default(n_rx: usize, n_tx: usize, history: usize, tau_max: usize) -> Self {
        let widths = [128, 128, 128, 256, 256, 256, 256, 256, 128, 128, 128];
        let dilations = [
            (1, 1),
            (1, 1),
            (2, 3),
            (2, 3),
            (3, 5),
            (3, 5),
            (3, 5),
            (2, 3),
            (2, 3),
            (1, 1),
            (1, 1),
        ];
        let blocks = widths
            .iter()
            .zip(dilations)
            .map(|(&channels, dilation)| BlockSpec {
                channels,
                filter: (3, 3),
                dilation,
            })
            .collect();
        ModelConfig {
            n_rx,
            n_tx,
            history,
            tau_max,
            conv_in_channels: 128,
            blocks,
            l2_penalty: 1e-4,
        }
    }

    /// Constant-width variant (e.g. 64x11) with the standard dilation ladder.
    pub fn constant_width(
        width: usize,
        depth: usize,
        n_rx: usize,
        n_tx: usize,
        history: usize,
        tau_max: usize,
    ) -> Self {
        let blocks = dilation_ladder(depth, DilationProfile::Full)
            .into_iter()
            .map(|dilation| BlockSpec {
                channels: width,
                filter: (3, 3),
                dilation,
            })
            .collect();
        ModelConfig {
            n_rx,
            n_tx,
            history,
            tau_max,
            conv_in_channels: width,
            blocks,
            l2_penalty: 1e-4,
        }
    }

    /// Smallest variant: 7 blocks, 32/64 widths, ~45k parameters at 4x2.
    pub fn xxs(n_rx: usize, n_tx: usize, history: usize, tau_max: usize) -> Self {
        let widths = [32, 32, 64, 64, 64, 32, 32];
        let dils = dilation_ladder(7, DilationProfile::Full);
        let blocks = widths
            .iter()
            .zip(dils)
            .map(|(&channels, dilation)| BlockSpec {
                channels,
                filter: (3, 3),
                dilation,
            })
            .collect();
        ModelConfig {
            n_rx,
            n_tx,
            history,
            tau_max,
            conv_in_channels: 32,
            blocks,
            l2_penalty: 1e-4,
        }
    }

    /// Replace every dilation according to the ablation profile.
    pub fn with_dilation_profile(mut self, profile: DilationProfile) -> Self {
        match profile {
            DilationProfile::Full => {}
            DilationProfile::Short => {
                for b in self.blocks.iter_mut() {
                    b.dilation = (b.dilation.0.min(2), b.dilation.1.min(3));
                }
            }
            DilationProfile::None => {
                for b in self.blocks.iter_mut() {
                    b.dilation = (1, 1);
                }
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.history) {
            return Err(Error::Config(format!(
                "history must be 1..=3, got {}",
                self.history
            )));
        }
        if self.tau_max == 0 {
            return Err(Error::Config("tau_max must be >= 1".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.filter.0 % 2 == 0 || b.filter.1 % 2 == 0 {
                return Err(Error::Config(format!(
                    "block {i}: even filter dims {:?}",
                    b.filter
                )));
            }
        }
        Ok(())
    }

    /// Real input channels: complex channels split re/im, plus the tau plane.
    pub fn input_channels(&self) -> usize {
        2 * self.n_rx * self.n_tx * self.history + 1
    }

    /// Real output channels carrying the complex prediction.
    pub fn output_channels(&self) -> usize {
        2 * self.n_rx * self.n_tx
    }

    /// Exact count of trainable scalars.
    pub fn param_count(&self) -> usize {
        let cin = self.input_channels();
        let cout = self.output_channels();
        let c0 = self.conv_in_channels;
        let mut total = cin * c0 + c0; // conv in
        let mut prev = c0;
        for b in &self.blocks {
            let taps = b.filter.0 * b.filter.1;
            let c = b.channels;
            total += 2 * prev; // norm 1
            total += taps * prev + prev; // depthwise 1
            total += prev * c + c; // pointwise 1
            total += 2 * c; // norm 2
            total += taps * c + c; // depthwise 2
            total += c * c + c; // pointwise 2
            if prev != c {
                total += prev * c + c; // skip projection
            }
            prev = c;
        }
        total += prev * cout + cout; // conv out
        total
    }

    /// Receptive field (time, frequency); each block contributes two
    /// depthwise convolutions.
    pub fn receptive_field(&self) -> (usize, usize) {
        let mut rf = (1usize, 1usize);
        for b in &self.blocks {
            rf.0 += 2 * (b.filter.0 - 1) * b.dilation.0;
            rf.1 += 2 * (b.filter.1 - 1) * b.dilation.1;
        }
        rf
    }

    /// Multiply counts per resource element: (depthwise-separable blocks,
    /// equivalent full convolutions).
    pub fn block_multiplies(&self) -> (u64, u64) {
        let mut separable = 0u64;
        let mut full = 0u64;
        let mut prev = self.conv_in_channels as u64;
        for b in &self.blocks {
            let taps = (b.filter.0 * b.filter.1) as u64;
            let c = b.channels as u64;
            separable += taps * prev + prev * c + taps * c + c * c;
            full += taps * prev * c + taps * c * c;
            prev = c;
        }
        (separable, full)
    }
}

/// Symmetric dilation ladder: ramp (1,1) -> (2,3) -> (3,5), plateau at
/// (3,5), ramp back down.
pub fn dilation_ladder(depth: usize, profile: DilationProfile) -> Vec<(usize, usize)> {
    let ramp = [(1usize, 1usize), (2, 3), (3, 5)];
    let mut out = Vec::with_capacity(depth);
    if depth <= 2 * ramp.len() {
        let half = depth / 2;
        out.extend_from_slice(&ramp[..half.min(ramp.len())]);
        if depth % 2 == 1 {
            out.push(ramp[(half).min(ramp.len() - 1)]);
        }
        let mut down: Vec<_> = out[..half].to_vec();
        down.reverse();
        out.extend(down);
    } else {
        out.extend_from_slice(&ramp);
        for _ in 0..depth - 2 * ramp.len() {
            out.push((3, 5));
        }
        let mut down = ramp.to_vec();
        down.reverse();
        out.extend(down);
    }
    match profile {
        DilationProfile::Full => out,
        DilationProfile::Short => out.into_iter().map(|d| (d.0.min(2), d.1.min(3))).collect(),
        DilationProfile::None => out.into_iter().map(|_| (1, 1)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_param_count_within_tolerance() {
        let c = ModelConfig::table_default(4, 2, 1, 6);
        let count = c.param_count() as f64;
        assert!(
            (count - 963_100.0).abs() / 963_100.0 < 0.05,
            "reference config has {count} params"
        );
    }

    #[test]
    fn constant_width_64x11_count_within_tolerance() {
        let c = ModelConfig::constant_width(64, 11, 4, 2, 1, 6);
        let count = c.param_count() as f64;
        assert!(
            (count - 114_700.0).abs() / 114_700.0 < 0.05,
            "64x11 config has {count} params"
        );
    }

    #[test]
    fn xxs_under_50k() {
        let c = ModelConfig::xxs(4, 2, 1, 6);
        assert!(c.param_count() <= 50_000, "{}", c.param_count());
    }

    #[test]
    fn no_block_count_by_hand() {
        // conv-in 17 -> 16 plus conv-out 16 -> 16, no blocks:
        // (17*16 + 16) + (16*16 + 16) = 288 + 272 = 560
        let c = ModelConfig {
            n_rx: 4,
            n_tx: 2,
            history: 1,
            tau_max: 1,
            conv_in_channels: 16,
            blocks: vec![],
            l2_penalty: 0.0,
        };
        assert_eq!(c.param_count(), 560);
    }

    #[test]
    fn input_feature_depth() {
        let c = ModelConfig::table_default(4, 2, 1, 6);
        assert_eq!(c.input_channels(), 17);
        assert_eq!(c.output_channels(), 16);
        let c3 = ModelConfig::table_default(4, 2, 3, 6);
        assert_eq!(c3.input_channels(), 49);
    }

    #[test]
    fn receptive_field_grows_with_dilation() {
        let full = ModelConfig::table_default(4, 2, 1, 6);
        let none = full.clone().with_dilation_profile(DilationProfile::None);
        let short = full.clone().with_dilation_profile(DilationProfile::Short);
        let (fs, ff) = full.receptive_field();
        let (ss, sf) = short.receptive_field();
        let (ns, nf) = none.receptive_field();
        assert!(ns < ss && ss < fs, "time rf: {ns} {ss} {fs}");
        assert!(nf < sf && sf < ff, "freq rf: {nf} {sf} {ff}");
        // the reference ladder must see both pilot symbols across time
        assert!(fs >= 14);
    }

    #[test]
    fn separable_cheaper_than_full() {
        for c in [
            ModelConfig::table_default(4, 2, 1, 6),
            ModelConfig::constant_width(64, 11, 4, 2, 1, 6),
            ModelConfig::xxs(4, 2, 1, 6),
        ] {
            let (sep, full) = c.block_multiplies();
            assert!(sep < full, "separable {sep} vs full {full}");
        }
    }

    #[test]
    fn ladder_depths() {
        assert_eq!(dilation_ladder(11, DilationProfile::Full).len(), 11);
        assert_eq!(dilation_ladder(7, DilationProfile::Full).len(), 7);
        assert_eq!(
            dilation_ladder(7, DilationProfile::Full),
            vec![(1, 1), (2, 3), (3, 5), (3, 5), (3, 5), (2, 3), (1, 1)]
        );
        assert_eq!(dilation_ladder(4, DilationProfile::Full).len(), 4);
        assert!(dilation_ladder(9, DilationProfile::None)
            .iter()
            .all(|&d| d == (1, 1)));
    }
}
