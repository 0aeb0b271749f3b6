//! Exact soft demapping as a fused tape op.
//!
//! For bit m the LLR is log-sum-exp over the bit-0 subset minus log-sum-exp
//! over the bit-1 subset of -|x - c|^2 / sigma^2, stabilized by the shared
//! maximum (a constant shift that cancels in the difference).

use super::tensor::Real;

/// Constellation data needed by the demapper, precision-independent.
#[derive(Debug, Clone)]
pub struct SoftDemapTables {
    /// Constellation points as (re, im), unit average energy.
    pub points: Vec<(f64, f64)>,
    pub n_bits: usize,
    /// For each bit index, a bitmask over points whose bit is 0.
    pub bit0_mask: Vec<u64>,
}

impl SoftDemapTables {
    pub fn new(points: Vec<(f64, f64)>, n_bits: usize, bit0_mask: Vec<u64>) -> Self {
        assert_eq!(bit0_mask.len(), n_bits);
        assert!(points.len() <= 64);
        SoftDemapTables {
            points,
            n_bits,
            bit0_mask,
        }
    }
}

fn points_as<R: Real>(t: &SoftDemapTables) -> Vec<(R, R)> {
    t.points
        .iter()
        .map(|&(re, im)| (R::from_f64_lossy(re), R::from_f64_lossy(im)))
        .collect()
}

pub fn llr_fwd<R: Real>(x: &[R], sigma2: &[R], t: &SoftDemapTables, count: usize) -> Vec<R> {
    let pts = points_as::<R>(t);
    let m = pts.len();
    let mut out = vec![R::zero(); count * t.n_bits];
    let mut e = vec![R::zero(); m];
    for i in 0..count {
        let (re, im) = (x[2 * i], x[2 * i + 1]);
        let s2 = sigma2[i];
        let mut vmax = R::neg_infinity();
        for (c, &(cre, cim)) in pts.iter().enumerate() {
            let d = (re - cre) * (re - cre) + (im - cim) * (im - cim);
            let v = -d / s2;
            e[c] = v;
            if v > vmax {
                vmax = v;
            }
        }
        for v in e.iter_mut() {
            *v = (*v - vmax).exp();
        }
        for b in 0..t.n_bits {
            let mask = t.bit0_mask[b];
            let mut s0 = R::zero();
            let mut s1 = R::zero();
            for (c, &ec) in e.iter().enumerate() {
                if mask >> c & 1 == 1 {
                    s0 += ec;
                } else {
                    s1 += ec;
                }
            }
            out[i * t.n_bits + b] = s0.ln() - s1.ln();
        }
    }
    out
}

/// Per-point weights dLLR/dv aggregated over upstream bit gradients.
fn point_weights<R: Real>(
    g: &[R],
    e: &[R],
    t: &SoftDemapTables,
    i: usize,
    w: &mut [R],
) {
    for v in w.iter_mut() {
        *v = R::zero();
    }
    for b in 0..t.n_bits {
        let gb = g[i * t.n_bits + b];
        if gb == R::zero() {
            continue;
        }
        let mask = t.bit0_mask[b];
        let mut s0 = R::zero();
        let mut s1 = R::zero();
        for (c, &ec) in e.iter().enumerate() {
            if mask >> c & 1 == 1 {
                s0 += ec;
            } else {
                s1 += ec;
            }
        }
        for (c, &ec) in e.iter().enumerate() {
            if mask >> c & 1 == 1 {
                w[c] += gb * ec / s0;
            } else {
                w[c] -= gb * ec / s1;
            }
        }
    }
}

fn with_softmax<R: Real>(
    x: &[R],
    sigma2: &[R],
    t: &SoftDemapTables,
    count: usize,
    mut sink: impl FnMut(usize, &[R], &[(R, R)], R, R, R),
) {
    let pts = points_as::<R>(t);
    let m = pts.len();
    let mut e = vec![R::zero(); m];
    for i in 0..count {
        let (re, im) = (x[2 * i], x[2 * i + 1]);
        let s2 = sigma2[i];
        let mut vmax = R::neg_infinity();
        for (c, &(cre, cim)) in pts.iter().enumerate() {
            let d = (re - cre) * (re - cre) + (im - cim) * (im - cim);
            let v = -d / s2;
            e[c] = v;
            if v > vmax {
                vmax = v;
            }
        }
        for v in e.iter_mut() {
            *v = (*v - vmax).exp();
        }
        sink(i, &e, &pts, re, im, s2);
    }
}

pub fn llr_bwd_symbols<R: Real>(
    g: &[R],
    x: &[R],
    sigma2: &[R],
    t: &SoftDemapTables,
    count: usize,
    gx: &mut [R],
) {
    let mut w = vec![R::zero(); t.points.len()];
    let two = R::from_f64_lossy(2.0);
    with_softmax(x, sigma2, t, count, |i, e, pts, re, im, s2| {
        point_weights(g, e, t, i, &mut w);
        let mut acc_re = R::zero();
        let mut acc_im = R::zero();
        for (c, &(cre, cim)) in pts.iter().enumerate() {
            // dv/dre = -2 (re - cre) / s2
            acc_re -= w[c] * two * (re - cre) / s2;
            acc_im -= w[c] * two * (im - cim) / s2;
        }
        gx[2 * i] += acc_re;
        gx[2 * i + 1] += acc_im;
    });
}

pub fn llr_bwd_sigma2<R: Real>(
    g: &[R],
    x: &[R],
    sigma2: &[R],
    t: &SoftDemapTables,
    count: usize,
    gs: &mut [R],
) {
    let mut w = vec![R::zero(); t.points.len()];
    with_softmax(x, sigma2, t, count, |i, e, pts, re, im, s2| {
        point_weights(g, e, t, i, &mut w);
        let mut acc = R::zero();
        for (c, &(cre, cim)) in pts.iter().enumerate() {
            let d = (re - cre) * (re - cre) + (im - cim) * (im - cim);
            // dv/ds2 = d / s2^2
            acc += w[c] * d / (s2 * s2);
        }
        gs[i] += acc;
    });
}
