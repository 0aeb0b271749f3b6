//! Resource grids: data symbols plus pilots with per-layer muting.

use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::constellation::{Constellation, BITS_PER_SYMBOL};
use super::pilot::PilotPattern;
use crate::autodiff::{Real, Tensor};
use crate::error::Result;

/// One slot's transmit grid for `n_layers` layers.
///
/// At a pilot RE the owning layer carries the pilot value and the others are
/// muted; every RE outside the pilot symbols carries data on all layers.
#[derive(Debug, Clone)]
pub struct ResourceGrid {
    pub s: usize,
    pub f: usize,
    pub n_layers: usize,
    /// [s * f * n_layers] complex symbols.
    pub symbols: Vec<Complex<f64>>,
    /// Data bits in (data RE, layer, bit) order, matching `data_idx`.
    pub bits: Vec<u8>,
    /// Flat data-RE indices, ascending (mirrors the pattern's data set).
    pub data_idx: Vec<usize>,
}

impl ResourceGrid {
    /// Build a grid from explicit data bits (length n_data * n_layers * 4).
    pub fn from_bits(
        pattern: &PilotPattern,
        constellation: &Constellation,
        bits: Vec<u8>,
    ) -> Result<Self> {
        let (s, f, nl) = (pattern.s, pattern.f, pattern.n_layers);
        let data_idx = pattern.data_indices().as_ref().clone();
        let expect = data_idx.len() * nl * BITS_PER_SYMBOL;
        if bits.len() != expect {
            return Err(crate::error::Error::InvalidArgument(format!(
                "expected {expect} data bits, got {}",
                bits.len()
            )));
        }
        let mut symbols = vec![Complex::new(0.0, 0.0); s * f * nl];
        for (d, &re_idx) in data_idx.iter().enumerate() {
            for layer in 0..nl {
                let o = (d * nl + layer) * BITS_PER_SYMBOL;
                let sym = constellation.point_for_bits(&bits[o..o + BITS_PER_SYMBOL]);
                symbols[re_idx * nl + layer] = sym;
            }
        }
        for sym_i in 0..s {
            if !pattern.is_pilot_symbol(sym_i) {
                continue;
            }
            for sc in 0..f {
                let re_idx = sym_i * f + sc;
                let owner = pattern.owner(sc);
                symbols[re_idx * nl + owner] = pattern.value_at(sym_i, sc);
            }
        }
        Ok(ResourceGrid {
            s,
            f,
            n_layers: nl,
            symbols,
            bits,
            data_idx,
        })
    }

    /// Build a grid with random data bits.
    pub fn random(
        pattern: &PilotPattern,
        constellation: &Constellation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = pattern.n_data_res() * pattern.n_layers * BITS_PER_SYMBOL;
        let bits: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
        Self::from_bits(pattern, constellation, bits)
    }

    /// [s, f, n_layers, 2] tensor of the transmit symbols.
    pub fn to_tensor<R: Real>(&self) -> Tensor<R> {
        let mut data = Vec::with_capacity(self.symbols.len() * 2);
        for v in &self.symbols {
            data.push(R::from_f64_lossy(v.re));
            data.push(R::from_f64_lossy(v.im));
        }
        Tensor::from_vec(&[self.s, self.f, self.n_layers, 2], data)
    }

    /// Bits carried by a single layer, in data-RE order.
    pub fn layer_bits(&self, layer: usize) -> Vec<u8> {
        let nl = self.n_layers;
        let mut out = Vec::with_capacity(self.data_idx.len() * BITS_PER_SYMBOL);
        for d in 0..self.data_idx.len() {
            let o = (d * nl + layer) * BITS_PER_SYMBOL;
            out.extend_from_slice(&self.bits[o..o + BITS_PER_SYMBOL]);
        }
        out
    }
}
