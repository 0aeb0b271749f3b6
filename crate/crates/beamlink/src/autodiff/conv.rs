//! Depthwise / pointwise convolution and per-channel normalization kernels.
//!
//! Grids are [s, f, c] row-major; convolutions are zero-padded to "same"
//! output size, including dilated taps.

use super::tensor::Real;

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub s: usize,
    pub f: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub dh: usize,
    pub dw: usize,
}

impl ConvDims {
    #[inline]
    fn tap_offsets(&self, i: usize, j: usize) -> (isize, isize) {
        let ch = (self.kh / 2) as isize;
        let cw = (self.kw / 2) as isize;
        (
            (i as isize - ch) * self.dh as isize,
            (j as isize - cw) * self.dw as isize,
        )
    }

    /// Output index ranges for which input index + offset stays in bounds.
    #[inline]
    fn valid_range(extent: usize, offset: isize) -> (usize, usize) {
        let lo = (-offset).max(0) as usize;
        let hi_signed = extent as isize - offset.max(0);
        (lo.min(extent), hi_signed.max(0) as usize)
    }
}

pub fn depthwise_fwd<R: Real>(x: &[R], kernel: &[R], bias: &[R], d: &ConvDims) -> Vec<R> {
    let mut out = vec![R::zero(); d.s * d.f * d.c];
    for (idx, o) in out.iter_mut().enumerate() {
        *o = bias[idx % d.c];
    }
    for i in 0..d.kh {
        for j in 0..d.kw {
            let (ds, df) = d.tap_offsets(i, j);
            let (s0, s1) = ConvDims::valid_range(d.s, ds);
            let (f0, f1) = ConvDims::valid_range(d.f, df);
            let kbase = (i * d.kw + j) * d.c;
            for si in s0..s1 {
                let xs = (si as isize + ds) as usize;
                for fi in f0..f1 {
                    let xf = (fi as isize + df) as usize;
                    let oi = (si * d.f + fi) * d.c;
                    let xi = (xs * d.f + xf) * d.c;
                    for ch in 0..d.c {
                        out[oi + ch] += kernel[kbase + ch] * x[xi + ch];
                    }
                }
            }
        }
    }
    out
}

pub fn depthwise_bwd_input<R: Real>(g: &[R], kernel: &[R], gx: &mut [R], d: &ConvDims) {
    for i in 0..d.kh {
        for j in 0..d.kw {
            let (ds, df) = d.tap_offsets(i, j);
            let (s0, s1) = ConvDims::valid_range(d.s, ds);
            let (f0, f1) = ConvDims::valid_range(d.f, df);
            let kbase = (i * d.kw + j) * d.c;
            for si in s0..s1 {
                let xs = (si as isize + ds) as usize;
                for fi in f0..f1 {
                    let xf = (fi as isize + df) as usize;
                    let oi = (si * d.f + fi) * d.c;
                    let xi = (xs * d.f + xf) * d.c;
                    for ch in 0..d.c {
                        gx[xi + ch] += kernel[kbase + ch] * g[oi + ch];
                    }
                }
            }
        }
    }
}

pub fn depthwise_bwd_kernel<R: Real>(g: &[R], x: &[R], gk: &mut [R], d: &ConvDims) {
    for i in 0..d.kh {
        for j in 0..d.kw {
            let (ds, df) = d.tap_offsets(i, j);
            let (s0, s1) = ConvDims::valid_range(d.s, ds);
            let (f0, f1) = ConvDims::valid_range(d.f, df);
            let kbase = (i * d.kw + j) * d.c;
            for si in s0..s1 {
                let xs = (si as isize + ds) as usize;
                for fi in f0..f1 {
                    let xf = (fi as isize + df) as usize;
                    let oi = (si * d.f + fi) * d.c;
                    let xi = (xs * d.f + xf) * d.c;
                    for ch in 0..d.c {
                        gk[kbase + ch] += x[xi + ch] * g[oi + ch];
                    }
                }
            }
        }
    }
}

/// gb[c] += sum over rows of g[.., c]
pub fn bias_bwd<R: Real>(g: &[R], gb: &mut [R], c: usize) {
    for (idx, &gi) in g.iter().enumerate() {
        gb[idx % c] += gi;
    }
}

pub fn pointwise_fwd<R: Real>(
    x: &[R],
    kernel: &[R],
    bias: &[R],
    rows: usize,
    c_in: usize,
    c_out: usize,
) -> Vec<R> {
    let mut out = vec![R::zero(); rows * c_out];
    R::gemm(rows, c_in, c_out, x, kernel, &mut out);
    for r in 0..rows {
        for o in 0..c_out {
            out[r * c_out + o] += bias[o];
        }
    }
    out
}

/// Per-channel biased mean and variance over the spatial rows.
pub fn spatial_stats<R: Real>(x: &[R], rows: usize, c: usize) -> (Vec<R>, Vec<R>) {
    let n = R::from_usize(rows).unwrap();
    let mut mean = vec![R::zero(); c];
    for r in 0..rows {
        for ch in 0..c {
            mean[ch] += x[r * c + ch];
        }
    }
    for m in mean.iter_mut() {
        *m = *m / n;
    }
    let mut var = vec![R::zero(); c];
    for r in 0..rows {
        for ch in 0..c {
            let d = x[r * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v = *v / n;
    }
    (mean, var)
}

pub fn norm_fwd<R: Real>(
    x: &[R],
    gamma: &[R],
    beta: &[R],
    mean: &[R],
    inv_std: &[R],
    rows: usize,
    c: usize,
) -> Vec<R> {
    let mut out = vec![R::zero(); rows * c];
    for r in 0..rows {
        for ch in 0..c {
            let xhat = (x[r * c + ch] - mean[ch]) * inv_std[ch];
            out[r * c + ch] = gamma[ch] * xhat + beta[ch];
        }
    }
    out
}

pub fn norm_bwd_input<R: Real>(
    g: &[R],
    x: &[R],
    gamma: &[R],
    mean: &[R],
    inv_std: &[R],
    from_batch: bool,
    rows: usize,
    c: usize,
    gx: &mut [R],
) {
    if !from_batch {
        for r in 0..rows {
            for ch in 0..c {
                gx[r * c + ch] += g[r * c + ch] * gamma[ch] * inv_std[ch];
            }
        }
        return;
    }
    // Batch-statistics backward: the mean/variance depend on the input.
    let n = R::from_usize(rows).unwrap();
    let mut m1 = vec![R::zero(); c]; // mean of dxhat
    let mut m2 = vec![R::zero(); c]; // mean of dxhat * xhat
    for r in 0..rows {
        for ch in 0..c {
            let dxhat = g[r * c + ch] * gamma[ch];
            let xhat = (x[r * c + ch] - mean[ch]) * inv_std[ch];
            m1[ch] += dxhat;
            m2[ch] += dxhat * xhat;
        }
    }
    for ch in 0..c {
        m1[ch] = m1[ch] / n;
        m2[ch] = m2[ch] / n;
    }
    for r in 0..rows {
        for ch in 0..c {
            let dxhat = g[r * c + ch] * gamma[ch];
            let xhat = (x[r * c + ch] - mean[ch]) * inv_std[ch];
            gx[r * c + ch] += inv_std[ch] * (dxhat - m1[ch] - xhat * m2[ch]);
        }
    }
}

pub fn norm_bwd_gamma<R: Real>(
    g: &[R],
    x: &[R],
    mean: &[R],
    inv_std: &[R],
    rows: usize,
    c: usize,
    gg: &mut [R],
) {
    for r in 0..rows {
        for ch in 0..c {
            let xhat = (x[r * c + ch] - mean[ch]) * inv_std[ch];
            gg[ch] += g[r * c + ch] * xhat;
        }
    }
}
