//! Pilot patterns and the linear interpolation plans derived from them.
//!
//! DMRS2 places pilots in the 3rd and 12th OFDM symbols (1-indexed), even
//! subcarriers owned by the first layer and odd by the second; SRS1 places
//! pilots in the second-to-last symbol only. Inside a pilot symbol the
//! non-owning layers are muted.

use std::sync::Arc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::GatherPlan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Dmrs2,
    Srs1,
}

impl PatternKind {
    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Dmrs2 => "dmrs2",
            PatternKind::Srs1 => "srs1",
        }
    }
}

/// Fixed seed for the deterministic QPSK pilot sequence.
const PILOT_SEED: u64 = 0x50494C4F;

#[derive(Debug, Clone)]
pub struct PilotPattern {
    pub kind: PatternKind,
    pub s: usize,
    pub f: usize,
    pub n_layers: usize,
    pub pilot_symbols: Vec<usize>,
    /// Unit-modulus pilot value transmitted by the owning layer, dense over
    /// the grid (zero at non-pilot REs).
    values: Vec<Complex<f64>>,
    /// Flat (sym * f + sc) indices of data REs (all REs outside pilot symbols).
    data_idx: Arc<Vec<usize>>,
    /// Flat indices of the pilot REs owned by each layer, ascending.
    layer_pilot_idx: Vec<Arc<Vec<usize>>>,
    /// Interpolation plan per layer: pilot rows -> full-grid rows.
    plans: Vec<Arc<GatherPlan>>,
}

impl PilotPattern {
    pub fn new(kind: PatternKind, s: usize, f: usize, n_layers: usize) -> Result<Self> {
        if s < 13 && kind == PatternKind::Dmrs2 {
            return Err(Error::InvalidArgument(format!(
                "DMRS2 needs at least 13 OFDM symbols, got {s}"
            )));
        }
        if s < 2 || f < 2 * n_layers || n_layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid pattern dims s={s} f={f} layers={n_layers}"
            )));
        }
        let pilot_symbols = match kind {
            PatternKind::Dmrs2 => vec![2usize, 11],
            PatternKind::Srs1 => vec![s - 2],
        };

        let mut rng = ChaCha8Rng::seed_from_u64(PILOT_SEED);
        let qpsk = 1.0 / 2f64.sqrt();
        let mut values = vec![Complex::new(0.0, 0.0); s * f];
        for &sym in &pilot_symbols {
            for sc in 0..f {
                let re = if rng.gen_bool(0.5) { qpsk } else { -qpsk };
                let im = if rng.gen_bool(0.5) { qpsk } else { -qpsk };
                values[sym * f + sc] = Complex::new(re, im);
            }
        }

        let mut data_idx = Vec::new();
        for sym in 0..s {
            if pilot_symbols.contains(&sym) {
                continue;
            }
            for sc in 0..f {
                data_idx.push(sym * f + sc);
            }
        }

        let mut layer_pilot_idx = Vec::with_capacity(n_layers);
        let mut plans = Vec::with_capacity(n_layers);
        for layer in 0..n_layers {
            let comb: Vec<usize> = (0..f).filter(|sc| sc % n_layers == layer).collect();
            let mut idx = Vec::with_capacity(pilot_symbols.len() * comb.len());
            for &sym in &pilot_symbols {
                for &sc in &comb {
                    idx.push(sym * f + sc);
                }
            }
            plans.push(Arc::new(build_plan(s, f, &pilot_symbols, &comb)));
            layer_pilot_idx.push(Arc::new(idx));
        }

        Ok(PilotPattern {
            kind,
            s,
            f,
            n_layers,
            pilot_symbols,
            values,
            data_idx: Arc::new(data_idx),
            layer_pilot_idx,
            plans,
        })
    }

    pub fn is_pilot_symbol(&self, sym: usize) -> bool {
        self.pilot_symbols.contains(&sym)
    }

    /// Owning layer of a pilot RE.
    pub fn owner(&self, sc: usize) -> usize {
        sc % self.n_layers
    }

    pub fn value_at(&self, sym: usize, sc: usize) -> Complex<f64> {
        self.values[sym * self.f + sc]
    }

    pub fn data_indices(&self) -> Arc<Vec<usize>> {
        self.data_idx.clone()
    }

    pub fn n_data_res(&self) -> usize {
        self.data_idx.len()
    }

    pub fn pilot_indices(&self, layer: usize) -> Arc<Vec<usize>> {
        self.layer_pilot_idx[layer].clone()
    }

    pub fn interp_plan(&self, layer: usize) -> Arc<GatherPlan> {
        self.plans[layer].clone()
    }

    /// Conjugated pilot values owned by `layer`, in pilot-index order.
    pub fn conj_pilot_values(&self, layer: usize) -> Vec<Complex<f64>> {
        self.layer_pilot_idx[layer]
            .iter()
            .map(|&i| self.values[i].conj())
            .collect()
    }
}

/// Linear interpolation: across frequency within each pilot symbol (linear
/// extrapolation at the band edges), then across time between pilot symbols
/// (nearest-pilot extension at the slot edges).
fn build_plan(s: usize, f: usize, pilot_syms: &[usize], comb: &[usize]) -> GatherPlan {
    let n_pilot_syms = pilot_syms.len();
    let comb_len = comb.len();
    let mut plan = GatherPlan::new(n_pilot_syms * comb_len, s * f);

    // frequency weights per target subcarrier: up to two (comb_pos, w) terms
    let freq_terms: Vec<Vec<(usize, f64)>> = (0..f)
        .map(|sc| {
            if comb_len == 1 {
                return vec![(0, 1.0)];
            }
            let scf = sc as f64;
            // segment index: clamp to [0, comb_len - 2] so edges extrapolate
            let i = comb.partition_point(|&c| c <= sc).saturating_sub(1);
            let i = i.min(comb_len - 2);
            let (c0, c1) = (comb[i] as f64, comb[i + 1] as f64);
            let w = (scf - c0) / (c1 - c0);
            vec![(i, 1.0 - w), (i + 1, w)]
        })
        .collect();

    // time weights per target symbol: up to two (pilot_sym_block, w) terms
    let time_terms: Vec<Vec<(usize, f64)>> = (0..s)
        .map(|sym| {
            if n_pilot_syms == 1 || sym <= pilot_syms[0] {
                return vec![(0, 1.0)];
            }
            if sym >= pilot_syms[n_pilot_syms - 1] {
                return vec![(n_pilot_syms - 1, 1.0)];
            }
            let j = pilot_syms.partition_point(|&p| p <= sym) - 1;
            let (p0, p1) = (pilot_syms[j] as f64, pilot_syms[j + 1] as f64);
            let w = (sym as f64 - p0) / (p1 - p0);
            vec![(j, 1.0 - w), (j + 1, w)]
        })
        .collect();

    for sym in 0..s {
        for sc in 0..f {
            let dst = sym * f + sc;
            for &(tb, wt) in &time_terms[sym] {
                for &(fp, wf) in &freq_terms[sc] {
                    plan.push(dst, tb * comb_len + fp, wt * wf);
                }
            }
        }
    }
    plan
}
