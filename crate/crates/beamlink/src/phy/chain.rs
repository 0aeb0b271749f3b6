//! Differentiable receiver building blocks: channel application with AWGN,
//! LS estimation, interpolation, rescaled LMMSE equalization, exact soft
//! demapping, and BER accounting.

use num_complex::Complex;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::constellation::{Constellation, BITS_PER_SYMBOL};
use super::pilot::PilotPattern;
use crate::autodiff::{Real, Tape, Tensor, VarId};
use crate::error::{Error, Result};

/// Unit-variance circularly-symmetric complex noise (per complex sample),
/// shaped [.., 2].
pub fn draw_unit_noise<R: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<R> {
    assert_eq!(shape.last(), Some(&2), "noise shape must end in the complex axis");
    let n: usize = shape.iter().product();
    let scale = 0.5f64.sqrt();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            R::from_f64_lossy(v * scale)
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Mean |z|^2 over the complex elements of a trailing-pair tensor.
pub fn mean_complex_power<R: Real>(t: &Tensor<R>) -> f64 {
    let d = t.data();
    let total: f64 = d.iter().map(|&v| v.to_f64_lossy().powi(2)).sum();
    total / (d.len() as f64 / 2.0)
}

/// y = H x per RE. h: [s, f, a, b, 2], x: [s, f, b, 2] -> [s, f, a, 2].
pub fn apply_channel<R: Real>(tape: &mut Tape<R>, h: VarId, x: VarId) -> Result<VarId> {
    let hs = tape.shape(h).to_vec();
    let xs = tape.shape(x).to_vec();
    if hs.len() != 5 || xs.len() != 4 || hs[0] != xs[0] || hs[1] != xs[1] || hs[3] != xs[2] {
        return Err(Error::ShapeMismatch {
            op: "apply_channel",
            detail: format!("h {:?} vs x {:?}", hs, xs),
        });
    }
    let b = hs[0] * hs[1];
    let (a, t) = (hs[2], hs[3]);
    let hf = tape.reshape(h, &[b, a, t, 2])?;
    let xf = tape.reshape(x, &[b, t, 1, 2])?;
    let y = tape.complex_matmul(hf, xf)?;
    tape.reshape(y, &[hs[0], hs[1], a, 2])
}

/// Add white noise at the given SNR, measuring the signal power from the
/// current values of `y` (post-channel). Returns the noisy node and the
/// per-complex-sample noise variance. The noise enters the tape as an
/// additive constant: gradients flow through the signal path only.
pub fn awgn<R: Real>(
    tape: &mut Tape<R>,
    y: VarId,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(VarId, f64)> {
    let unit = draw_unit_noise::<R>(tape.shape(y).to_vec().as_slice(), rng);
    awgn_with(tape, y, snr_db, &unit)
}

/// As [`awgn`] with a caller-supplied unit-variance noise tensor, so paired
/// evaluations can reuse one draw across methods.
pub fn awgn_with<R: Real>(
    tape: &mut Tape<R>,
    y: VarId,
    snr_db: f64,
    unit: &Tensor<R>,
) -> Result<(VarId, f64)> {
    if unit.shape() != tape.shape(y) {
        return Err(Error::ShapeMismatch {
            op: "awgn",
            detail: format!("noise {:?} vs signal {:?}", unit.shape(), tape.shape(y)),
        });
    }
    let p_sig = mean_complex_power(tape.value(y));
    let sigma2 = p_sig / 10f64.powf(snr_db / 10.0);
    let scale = R::from_f64_lossy(sigma2.sqrt());
    let noise = tape.constant(unit.map(|v| v * scale));
    let noisy = tape.add(y, noise)?;
    Ok((noisy, sigma2))
}

/// Raw LS estimates at the pilot REs of one layer:
/// y: [s, f, na, 2] -> [n_pilots, na, 2] via h = y . conj(pilot).
pub fn ls_raw<R: Real>(
    tape: &mut Tape<R>,
    y: VarId,
    pattern: &PilotPattern,
    layer: usize,
) -> Result<VarId> {
    let ys = tape.shape(y).to_vec();
    if ys.len() != 4 || ys[0] != pattern.s || ys[1] != pattern.f {
        return Err(Error::ShapeMismatch {
            op: "ls_raw",
            detail: format!("y {:?} vs pattern {}x{}", ys, pattern.s, pattern.f),
        });
    }
    let na = ys[2];
    let idx = pattern.pilot_indices(layer);
    if idx.is_empty() {
        return Err(Error::EmptyPilotSet);
    }
    let flat = tape.reshape(y, &[pattern.s * pattern.f, na, 2])?;
    let sel = tape.index_select_batch(flat, idx.clone())?;
    // conj pilot replicated across antennas
    let conj = pattern.conj_pilot_values(layer);
    let mut data = Vec::with_capacity(idx.len() * na * 2);
    for v in &conj {
        for _ in 0..na {
            data.push(R::from_f64_lossy(v.re));
            data.push(R::from_f64_lossy(v.im));
        }
    }
    let cp = tape.constant(Tensor::from_vec(&[idx.len(), na, 2], data));
    tape.complex_mul_elem(sel, cp)
}

/// LS + interpolation for the requested layers:
/// y: [s, f, na, 2] -> [s, f, na, layers.len(), 2].
pub fn channel_estimate<R: Real>(
    tape: &mut Tape<R>,
    y: VarId,
    pattern: &PilotPattern,
    layers: &[usize],
) -> Result<VarId> {
    let na = tape.shape(y)[2];
    let (s, f) = (pattern.s, pattern.f);
    let mut cols = Vec::with_capacity(layers.len());
    for &layer in layers {
        let raw = ls_raw(tape, y, pattern, layer)?;
        let full = tape.gather_linear(raw, pattern.interp_plan(layer))?;
        cols.push(tape.reshape(full, &[s * f, na, 1, 2])?);
    }
    let stacked = if cols.len() == 1 {
        cols[0]
    } else {
        tape.concat(&cols, 2)?
    };
    tape.reshape(stacked, &[s, f, na, layers.len(), 2])
}

/// Rescaled LMMSE equalizer with per-layer post-equalization noise variances.
///
/// x_hat = D V y with V = (H^H H + v I)^-1 H^H and D the inverse diagonal of
/// V H; sigma2_k = v * ||row k of D V||^2.
///
/// y: [s, f, na, 2], h: [s, f, na, nl, 2] ->
/// (x_hat [s, f, nl, 2], sigma2 [s, f, nl]).
pub fn lmmse_equalize<R: Real>(
    tape: &mut Tape<R>,
    y: VarId,
    h: VarId,
    noise_var: f64,
) -> Result<(VarId, VarId)> {
    let hs = tape.shape(h).to_vec();
    let ys = tape.shape(y).to_vec();
    if hs.len() != 5 || ys.len() != 4 || hs[..3] != ys[..3] {
        return Err(Error::ShapeMismatch {
            op: "lmmse_equalize",
            detail: format!("y {:?} vs h {:?}", ys, hs),
        });
    }
    if noise_var <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lmmse_equalize requires a positive noise variance, got {noise_var}"
        )));
    }
    let (s, f, na, nl) = (hs[0], hs[1], hs[2], hs[3]);
    let b = s * f;
    let hf = tape.reshape(h, &[b, na, nl, 2])?;
    let yf = tape.reshape(y, &[b, na, 1, 2])?;
    let hh = tape.hermitian(hf)?; // [b, nl, na, 2]
    let gram = tape.complex_matmul(hh, hf)?; // [b, nl, nl, 2]
    let inv = tape.small_complex_inverse(gram, R::from_f64_lossy(noise_var))?;
    let v = tape.complex_matmul(inv, hh)?; // [b, nl, na, 2]
    let vh = tape.complex_matmul(v, hf)?; // [b, nl, nl, 2]
    let diag = tape.diag_part(vh)?; // [b, nl, 2]
    let dinv = tape.complex_reciprocal(diag)?;
    let vy = tape.complex_matmul(v, yf)?; // [b, nl, 1, 2]
    let vyf = tape.reshape(vy, &[b, nl, 2])?;
    let xhat = tape.complex_mul_elem(vyf, dinv)?;
    let xhat = tape.reshape(xhat, &[s, f, nl, 2])?;

    // noise power through the rescaled equalizer rows
    let dv = tape.complex_scale_rows(v, dinv)?; // [b, nl, na, 2]
    let dv2 = tape.abs_squared(dv)?; // [b, nl, na]
    let row = tape.reduce_sum_last(dv2)?; // [b, nl]
    let sigma2 = tape.scale(row, R::from_f64_lossy(noise_var));
    let sigma2 = tape.reshape(sigma2, &[s, f, nl])?;
    Ok((xhat, sigma2))
}

/// Exact per-bit LLRs; positive means bit 0 is more likely.
pub fn compute_llr<R: Real>(
    tape: &mut Tape<R>,
    xhat: VarId,
    sigma2: VarId,
    constellation: &Constellation,
) -> Result<VarId> {
    tape.qam_llr(xhat, sigma2, constellation.demap_tables())
}

/// Fraction of hard decisions (LLR < 0 means bit 1) differing from `bits`.
pub fn ber<R: Real>(llr: &Tensor<R>, bits: &[u8]) -> Result<f64> {
    if llr.numel() != bits.len() {
        return Err(Error::ShapeMismatch {
            op: "ber",
            detail: format!("{} LLRs vs {} bits", llr.numel(), bits.len()),
        });
    }
    if bits.is_empty() {
        return Ok(0.0);
    }
    let errors = llr
        .data()
        .iter()
        .zip(bits)
        .filter(|(&l, &b)| {
            let hard = if l < R::zero() { 1u8 } else { 0u8 };
            hard != b
        })
        .count();
    Ok(errors as f64 / bits.len() as f64)
}

/// Bit error count (not fraction), for aggregating across slots.
pub fn bit_errors<R: Real>(llr: &Tensor<R>, bits: &[u8]) -> Result<u64> {
    if llr.numel() != bits.len() {
        return Err(Error::ShapeMismatch {
            op: "ber",
            detail: format!("{} LLRs vs {} bits", llr.numel(), bits.len()),
        });
    }
    Ok(llr
        .data()
        .iter()
        .zip(bits)
        .filter(|(&l, &b)| (if l < R::zero() { 1u8 } else { 0u8 }) != b)
        .count() as u64)
}

/// Pick one receive antenna: y [s, f, na, 2] -> [s, f, 1, 2].
pub fn select_antenna<R: Real>(tape: &mut Tape<R>, y: VarId, antenna: usize) -> Result<VarId> {
    let ys = tape.shape(y).to_vec();
    if ys.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "select_antenna",
            detail: format!("expected [s, f, na, 2], got {:?}", ys),
        });
    }
    let (s, f, na) = (ys[0], ys[1], ys[2]);
    let flat = tape.reshape(y, &[s * f, na, 2])?;
    let byant = tape.transpose(flat, &[1, 0, 2])?; // [na, s*f, 2]
    let sel = tape.index_select_batch(byant, std::sync::Arc::new(vec![antenna]))?;
    let back = tape.transpose(sel, &[1, 0, 2])?; // [s*f, 1, 2]
    tape.reshape(back, &[s, f, 1, 2])
}

/// Constant tensor from complex values, shape = prefix + [2].
pub fn complex_constant<R: Real>(prefix: &[usize], values: &[Complex<f64>]) -> Tensor<R> {
    let mut shape = prefix.to_vec();
    shape.push(2);
    let mut data = Vec::with_capacity(values.len() * 2);
    for v in values {
        data.push(R::from_f64_lossy(v.re));
        data.push(R::from_f64_lossy(v.im));
    }
    Tensor::from_vec(&shape, data)
}

/// Brute-force LLR oracle: direct evaluation of the two-subset sum at
/// moderate SNR, kept independent of the tape demapper.
pub fn llr_oracle(
    xhat: Complex<f64>,
    sigma2: f64,
    constellation: &Constellation,
) -> [f64; BITS_PER_SYMBOL] {
    let mut out = [0.0; BITS_PER_SYMBOL];
    for m in 0..BITS_PER_SYMBOL {
        let (mut s0, mut s1) = (0.0f64, 0.0f64);
        for (label, p) in constellation.points().iter().enumerate() {
            let e = (-(xhat - p).norm_sqr() / sigma2).exp();
            if label >> (3 - m) & 1 == 0 {
                s0 += e;
            } else {
                s1 += e;
            }
        }
        out[m] = s0.ln() - s1.ln();
    }
    out
}
