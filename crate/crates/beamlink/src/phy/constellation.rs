//! Gray-labeled 16-QAM with unit average energy.
//!
//! Bit convention for (b0, b1, b2, b3): b0 = I sign, b1 = I magnitude,
//! b2 = Q sign, b3 = Q magnitude; sign bit 0 maps to +, magnitude bit 0 to
//! the inner level. Levels are {±1, ±3}/sqrt(10).

use std::sync::Arc;

use num_complex::Complex;

use crate::autodiff::SoftDemapTables;
use crate::error::{Error, Result};

pub const BITS_PER_SYMBOL: usize = 4;

#[derive(Debug, Clone)]
pub struct Constellation {
    /// Points indexed by the 4-bit label (b0 b1 b2 b3, b0 most significant).
    points: Vec<Complex<f64>>,
    tables: Arc<SoftDemapTables>,
}

fn level(sign_bit: u8, mag_bit: u8) -> f64 {
    let mag = if mag_bit == 0 { 1.0 } else { 3.0 };
    let sign = if sign_bit == 0 { 1.0 } else { -1.0 };
    sign * mag / 10f64.sqrt()
}

impl Default for Constellation {
    fn default() -> Self {
        Self::qam16()
    }
}

impl Constellation {
    pub fn qam16() -> Self {
        let mut points = Vec::with_capacity(16);
        for label in 0..16u8 {
            let b = [label >> 3 & 1, label >> 2 & 1, label >> 1 & 1, label & 1];
            points.push(Complex::new(level(b[0], b[1]), level(b[2], b[3])));
        }
        let mut bit0_mask = vec![0u64; BITS_PER_SYMBOL];
        for (m, mask) in bit0_mask.iter_mut().enumerate() {
            for label in 0..16u8 {
                if label >> (3 - m) & 1 == 0 {
                    *mask |= 1 << label;
                }
            }
        }
        let tables = Arc::new(SoftDemapTables::new(
            points.iter().map(|p| (p.re, p.im)).collect(),
            BITS_PER_SYMBOL,
            bit0_mask,
        ));
        Constellation { points, tables }
    }

    pub fn points(&self) -> &[Complex<f64>] {
        &self.points
    }

    pub fn demap_tables(&self) -> Arc<SoftDemapTables> {
        self.tables.clone()
    }

    pub fn point_for_bits(&self, bits: &[u8]) -> Complex<f64> {
        debug_assert_eq!(bits.len(), BITS_PER_SYMBOL);
        let label = (bits[0] << 3 | bits[1] << 2 | bits[2] << 1 | bits[3]) as usize;
        self.points[label]
    }

    /// Map a bit string (length divisible by 4) to symbols.
    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<Complex<f64>>> {
        if bits.len() % BITS_PER_SYMBOL != 0 {
            return Err(Error::InvalidArgument(format!(
                "bit count {} not divisible by {}",
                bits.len(),
                BITS_PER_SYMBOL
            )));
        }
        Ok(bits
            .chunks_exact(BITS_PER_SYMBOL)
            .map(|c| self.point_for_bits(c))
            .collect())
    }

    /// Nearest-point hard decision back to bits.
    pub fn hard_demap(&self, symbol: Complex<f64>) -> [u8; BITS_PER_SYMBOL] {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (symbol - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        let label = best as u8;
        [label >> 3 & 1, label >> 2 & 1, label >> 1 & 1, label & 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_bits_map_to_inner_first_quadrant() {
        let c = Constellation::qam16();
        let p = c.point_for_bits(&[0, 0, 0, 0]);
        let want = 1.0 / 10f64.sqrt();
        assert!((p.re - want).abs() < 1e-15 && (p.im - want).abs() < 1e-15);
    }

    #[test]
    fn unit_average_energy() {
        let c = Constellation::qam16();
        let avg: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert!((avg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bit_subsets_partition_constellation() {
        let c = Constellation::qam16();
        for m in 0..BITS_PER_SYMBOL {
            let mask = c.demap_tables().bit0_mask[m];
            assert_eq!(mask.count_ones() as usize, 8, "bit {m}");
            assert_eq!(mask & !0xFFFF, 0);
        }
    }

    #[test]
    fn hard_demap_roundtrip_all_labels() {
        let c = Constellation::qam16();
        for label in 0..16u8 {
            let bits = [label >> 3 & 1, label >> 2 & 1, label >> 1 & 1, label & 1];
            let sym = c.point_for_bits(&bits);
            assert_eq!(c.hard_demap(sym), bits);
        }
    }

    #[test]
    fn gray_neighbors_differ_in_one_bit() {
        let c = Constellation::qam16();
        let step = 2.0 / 10f64.sqrt();
        for (i, pi) in c.points().iter().enumerate() {
            for (j, pj) in c.points().iter().enumerate() {
                if i >= j {
                    continue;
                }
                let d = (pi - pj).norm();
                if (d - step).abs() < 1e-9 {
                    let diff = (i ^ j).count_ones();
                    assert_eq!(diff, 1, "points {i} and {j} are neighbors but differ in {diff} bits");
                }
            }
        }
    }

    #[test]
    fn map_bits_requires_multiple_of_four() {
        let c = Constellation::qam16();
        assert!(c.map_bits(&[0, 1, 0]).is_err());
        assert_eq!(c.map_bits(&[0, 1, 0, 1, 1, 0, 0, 0]).unwrap().len(), 2);
    }
}
