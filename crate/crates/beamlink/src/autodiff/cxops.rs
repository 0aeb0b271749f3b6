//! Complex kernels over the trailing-(re, im) representation.
//!
//! Gradients follow the carrier convention g = dL/dRe + i dL/dIm, which makes
//! the backward of C = A.B equal to gA = gC.B^H and gB = A^H.gC.

use num_complex::Complex;

use super::tensor::Real;
use crate::error::{Error, Result};

#[inline]
fn at<R: Real>(d: &[R], i: usize) -> Complex<R> {
    Complex::new(d[2 * i], d[2 * i + 1])
}

#[inline]
fn add_at<R: Real>(d: &mut [R], i: usize, v: Complex<R>) {
    d[2 * i] += v.re;
    d[2 * i + 1] += v.im;
}

#[inline]
fn set_at<R: Real>(d: &mut [R], i: usize, v: Complex<R>) {
    d[2 * i] = v.re;
    d[2 * i + 1] = v.im;
}

pub fn matmul_fwd<R: Real>(
    a: &[R],
    b: &[R],
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<R> {
    let mut out = vec![R::zero(); batch * m * n * 2];
    for t in 0..batch {
        let ao = if a_batched { t * m * k } else { 0 };
        let bo = if b_batched { t * k * n } else { 0 };
        let oo = t * m * n;
        for i in 0..m {
            for j in 0..n {
                let mut acc = Complex::new(R::zero(), R::zero());
                for l in 0..k {
                    acc = acc + at(a, ao + i * k + l) * at(b, bo + l * n + j);
                }
                set_at(&mut out, oo + i * n + j, acc);
            }
        }
    }
    out
}

/// gA += gC . B^H
pub fn matmul_bwd_a<R: Real>(
    g: &[R],
    b: &[R],
    ga: &mut [R],
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
) {
    for t in 0..batch {
        let go = t * m * n;
        let bo = if b_batched { t * k * n } else { 0 };
        let ao = if a_batched { t * m * k } else { 0 };
        for i in 0..m {
            for l in 0..k {
                let mut acc = Complex::new(R::zero(), R::zero());
                for j in 0..n {
                    acc = acc + at(g, go + i * n + j) * at(b, bo + l * n + j).conj();
                }
                add_at(ga, ao + i * k + l, acc);
            }
        }
    }
}

/// gB += A^H . gC
pub fn matmul_bwd_b<R: Real>(
    g: &[R],
    a: &[R],
    gb: &mut [R],
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
) {
    for t in 0..batch {
        let go = t * m * n;
        let ao = if a_batched { t * m * k } else { 0 };
        let bo = if b_batched { t * k * n } else { 0 };
        for l in 0..k {
            for j in 0..n {
                let mut acc = Complex::new(R::zero(), R::zero());
                for i in 0..m {
                    acc = acc + at(a, ao + i * k + l).conj() * at(g, go + i * n + j);
                }
                add_at(gb, bo + l * n + j, acc);
            }
        }
    }
}

pub fn hermitian_fwd<R: Real>(x: &[R], batch: usize, m: usize, n: usize) -> Vec<R> {
    let mut out = vec![R::zero(); batch * m * n * 2];
    for t in 0..batch {
        for i in 0..m {
            for j in 0..n {
                let v = at(x, t * m * n + i * n + j).conj();
                set_at(&mut out, t * m * n + j * m + i, v);
            }
        }
    }
    out
}

pub fn hermitian_bwd<R: Real>(g: &[R], gx: &mut [R], batch: usize, m: usize, n: usize) {
    for t in 0..batch {
        for i in 0..m {
            for j in 0..n {
                let v = at(g, t * m * n + j * m + i).conj();
                add_at(gx, t * m * n + i * n + j, v);
            }
        }
    }
}

pub fn mul_elem_fwd<R: Real>(a: &[R], b: &[R]) -> Vec<R> {
    let mut out = vec![R::zero(); a.len()];
    for i in 0..a.len() / 2 {
        set_at(&mut out, i, at(a, i) * at(b, i));
    }
    out
}

/// g_operand += g . conj(other)
pub fn mul_elem_bwd<R: Real>(g: &[R], other: &[R], gout: &mut [R]) {
    for i in 0..g.len() / 2 {
        add_at(gout, i, at(g, i) * at(other, i).conj());
    }
}

pub fn scale_rows_fwd<R: Real>(
    m: &[R],
    s: &[R],
    batch: usize,
    rows: usize,
    cols: usize,
) -> Vec<R> {
    let mut out = vec![R::zero(); m.len()];
    for t in 0..batch {
        for i in 0..rows {
            let sv = at(s, t * rows + i);
            for j in 0..cols {
                let idx = t * rows * cols + i * cols + j;
                set_at(&mut out, idx, at(m, idx) * sv);
            }
        }
    }
    out
}

pub fn scale_rows_bwd_mat<R: Real>(
    g: &[R],
    s: &[R],
    gm: &mut [R],
    batch: usize,
    rows: usize,
    cols: usize,
) {
    for t in 0..batch {
        for i in 0..rows {
            let sv = at(s, t * rows + i).conj();
            for j in 0..cols {
                let idx = t * rows * cols + i * cols + j;
                add_at(gm, idx, at(g, idx) * sv);
            }
        }
    }
}

pub fn scale_rows_bwd_scale<R: Real>(
    g: &[R],
    m: &[R],
    gs: &mut [R],
    batch: usize,
    rows: usize,
    cols: usize,
) {
    for t in 0..batch {
        for i in 0..rows {
            let mut acc = Complex::new(R::zero(), R::zero());
            for j in 0..cols {
                let idx = t * rows * cols + i * cols + j;
                acc = acc + at(g, idx) * at(m, idx).conj();
            }
            add_at(gs, t * rows + i, acc);
        }
    }
}

pub fn reciprocal_fwd<R: Real>(x: &[R]) -> Vec<R> {
    let mut out = vec![R::zero(); x.len()];
    for i in 0..x.len() / 2 {
        let z = at(x, i);
        let d = z.norm_sqr();
        set_at(&mut out, i, Complex::new(z.re / d, -z.im / d));
    }
    out
}

/// Holomorphic rule: g_z = conj(f'(z)) . g with f'(z) = -1/z^2 = -y^2.
pub fn reciprocal_bwd<R: Real>(g: &[R], y: &[R], gx: &mut [R]) {
    for i in 0..g.len() / 2 {
        let yv = at(y, i);
        let d = -(yv * yv);
        add_at(gx, i, d.conj() * at(g, i));
    }
}

pub fn diag_part_fwd<R: Real>(x: &[R], batch: usize, n: usize) -> Vec<R> {
    let mut out = vec![R::zero(); batch * n * 2];
    for t in 0..batch {
        for i in 0..n {
            set_at(&mut out, t * n + i, at(x, t * n * n + i * n + i));
        }
    }
    out
}

pub fn diag_part_bwd<R: Real>(g: &[R], gx: &mut [R], batch: usize, n: usize) {
    for t in 0..batch {
        for i in 0..n {
            add_at(gx, t * n * n + i * n + i, at(g, t * n + i));
        }
    }
}

const SINGULAR_DET_FLOOR: f64 = 1e-30;

/// Batched inverse of small matrices via Gauss-Jordan with partial pivoting.
pub fn small_inverse_fwd<R: Real>(
    x: &[R],
    batch: usize,
    n: usize,
    ridge: R,
) -> Result<Vec<R>> {
    let mut out = vec![R::zero(); batch * n * n * 2];
    let mut aug = vec![Complex::new(R::zero(), R::zero()); n * 2 * n];
    for t in 0..batch {
        // augmented [A + ridge I | I]
        for i in 0..n {
            for j in 0..n {
                let mut v = at(x, t * n * n + i * n + j);
                if i == j {
                    v = v + Complex::new(ridge, R::zero());
                }
                aug[i * 2 * n + j] = v;
                aug[i * 2 * n + n + j] = if i == j {
                    Complex::new(R::one(), R::zero())
                } else {
                    Complex::new(R::zero(), R::zero())
                };
            }
        }
        let mut det = Complex::new(R::one(), R::zero());
        for col in 0..n {
            let mut pivot = col;
            let mut best = aug[col * 2 * n + col].norm_sqr();
            for r in col + 1..n {
                let m = aug[r * 2 * n + col].norm_sqr();
                if m > best {
                    best = m;
                    pivot = r;
                }
            }
            if pivot != col {
                for j in 0..2 * n {
                    aug.swap(col * 2 * n + j, pivot * 2 * n + j);
                }
                det = -det;
            }
            let p = aug[col * 2 * n + col];
            det = det * p;
            if det.norm().to_f64_lossy() < SINGULAR_DET_FLOOR {
                return Err(Error::SingularMatrix {
                    op: "small_complex_inverse",
                    det: det.norm().to_f64_lossy(),
                    context: format!(" (batch element {})", t),
                });
            }
            let pinv = Complex::new(R::one(), R::zero()) / p;
            for j in 0..2 * n {
                aug[col * 2 * n + j] = aug[col * 2 * n + j] * pinv;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = aug[r * 2 * n + col];
                if factor.norm_sqr() == R::zero() {
                    continue;
                }
                for j in 0..2 * n {
                    let v = aug[col * 2 * n + j] * factor;
                    aug[r * 2 * n + j] = aug[r * 2 * n + j] - v;
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                set_at(&mut out, t * n * n + i * n + j, aug[i * 2 * n + n + j]);
            }
        }
    }
    Ok(out)
}

/// g_M += -Y^H . g_Y . Y^H using the saved inverse Y.
pub fn small_inverse_bwd<R: Real>(g: &[R], y: &[R], gx: &mut [R], batch: usize, n: usize) {
    let zero = Complex::new(R::zero(), R::zero());
    let mut tmp = vec![zero; n * n];
    for t in 0..batch {
        let off = t * n * n;
        // tmp = Y^H . G
        for i in 0..n {
            for j in 0..n {
                let mut acc = zero;
                for l in 0..n {
                    acc = acc + at(y, off + l * n + i).conj() * at(g, off + l * n + j);
                }
                tmp[i * n + j] = acc;
            }
        }
        // gx -= tmp . Y^H
        for i in 0..n {
            for j in 0..n {
                let mut acc = zero;
                for l in 0..n {
                    acc = acc + tmp[i * n + l] * at(y, off + j * n + l).conj();
                }
                add_at(gx, off + i * n + j, -acc);
            }
        }
    }
}
