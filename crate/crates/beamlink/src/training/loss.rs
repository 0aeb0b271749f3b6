//! Bit-detection losses on LLRs: binary cross entropy in logit form, the
//! exponential loss, SNR weighting, and the linear blend between them.

use crate::autodiff::{Real, Tape, Tensor, VarId};
use crate::error::{Error, Result};

/// LLR magnitudes are clamped here before entering either loss.
pub const LLR_CLAMP: f64 = 40.0;

fn bits_tensor<R: Real>(shape: &[usize], bits: &[u8]) -> Tensor<R> {
    Tensor::from_vec(
        shape,
        bits.iter()
            .map(|&b| if b == 0 { R::zero() } else { R::one() })
            .collect(),
    )
}

fn check_bits<R: Real>(tape: &Tape<R>, llr: VarId, bits: &[u8]) -> Result<Vec<usize>> {
    let shape = tape.shape(llr).to_vec();
    let n: usize = shape.iter().product();
    if n != bits.len() {
        return Err(Error::ShapeMismatch {
            op: "bit_loss",
            detail: format!("{} LLRs vs {} bits", n, bits.len()),
        });
    }
    Ok(shape)
}

/// Mean binary cross entropy with b_hat = sigmoid(L), evaluated in the
/// numerically stable logit form softplus(L) - b * L.
pub fn ce_loss<R: Real>(tape: &mut Tape<R>, llr: VarId, bits: &[u8]) -> Result<VarId> {
    let shape = check_bits(tape, llr, bits)?;
    let clamp = R::from_f64_lossy(LLR_CLAMP);
    let l = tape.clamp(llr, -clamp, clamp);
    let sp = tape.softplus(l);
    let b = tape.constant(bits_tensor::<R>(&shape, bits));
    let bl = tape.mul(b, l)?;
    let per_bit = tape.sub(sp, bl)?;
    Ok(tape.reduce_mean(per_bit))
}

/// Mean exponential loss exp(-y yhat) with y = 2b - 1, yhat = 2 sigmoid(L) - 1.
pub fn exp_loss<R: Real>(tape: &mut Tape<R>, llr: VarId, bits: &[u8]) -> Result<VarId> {
    let shape = check_bits(tape, llr, bits)?;
    let clamp = R::from_f64_lossy(LLR_CLAMP);
    let l = tape.clamp(llr, -clamp, clamp);
    let sig = tape.sigmoid(l);
    let two = R::from_f64_lossy(2.0);
    let yhat = tape.affine(sig, two, -R::one());
    let y: Vec<R> = bits
        .iter()
        .map(|&b| if b == 0 { -R::one() } else { R::one() })
        .collect();
    let yc = tape.constant(Tensor::from_vec(&shape, y));
    let prod = tape.mul(yhat, yc)?;
    let neg = tape.scale(prod, -R::one());
    let e = tape.exp(neg);
    Ok(tape.reduce_mean(e))
}

/// Sample weight log2(1 + snr) with snr linear.
pub fn snr_weight(snr_db: f64) -> f64 {
    (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

/// Blend weight toward CE: 0 before the window, linear ramp inside, 1 after.
pub fn blend_weight(progress: f64, window: (f64, f64)) -> f64 {
    let (start, end) = window;
    debug_assert!(start < end && (0.0..=1.0).contains(&start) && end <= 1.0);
    if progress <= start {
        0.0
    } else if progress >= end {
        1.0
    } else {
        (progress - start) / (end - start)
    }
}

/// SNR-weighted linear EXP -> CE blend:
/// snr_weight * [(1 - w) * EXP + w * CE].
pub fn blended_loss<R: Real>(
    tape: &mut Tape<R>,
    llr: VarId,
    bits: &[u8],
    snr_dl_db: f64,
    progress: f64,
    window: (f64, f64),
) -> Result<VarId> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::InvalidArgument(format!(
            "progress must lie in [0, 1], got {progress}"
        )));
    }
    let w = blend_weight(progress, window);
    let sw = snr_weight(snr_dl_db);
    let e = exp_loss(tape, llr, bits)?;
    let c = ce_loss(tape, llr, bits)?;
    let ew = tape.scale(e, R::from_f64_lossy(sw * (1.0 - w)));
    let cw = tape.scale(c, R::from_f64_lossy(sw * w));
    tape.add(ew, cw)
}
