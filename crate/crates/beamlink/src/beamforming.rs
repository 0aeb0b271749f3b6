//! Zero-forcing precoding, its Neumann-series approximation (matrix and
//! vectorized-apply forms), and transmit power normalization. Everything is
//! recorded on the tape; the Neumann backward differentiates through the
//! unrolled k-term computation.

use crate::autodiff::{Real, Tape, Tensor, VarId};
use crate::error::{Error, Result};

/// Exact ZF: W = H^H (H H^H)^-1 per RE.
/// h: [.., n_tx, n_rx, 2] -> [.., n_rx, n_tx, 2].
pub fn zf_exact<R: Real>(tape: &mut Tape<R>, h: VarId) -> Result<VarId> {
    let hh = tape.hermitian(h)?;
    let gram = tape.complex_matmul(h, hh)?;
    let inv = tape.small_complex_inverse(gram, R::zero())?;
    tape.complex_matmul(hh, inv)
}

struct NeumannParts {
    /// -D^-1 E
    m: VarId,
    /// elementwise 1 / diag(H H^H)
    dinv: VarId,
    hh: VarId,
}

fn neumann_parts<R: Real>(tape: &mut Tape<R>, h: VarId) -> Result<NeumannParts> {
    let hs = tape.shape(h).to_vec();
    let nt = hs[hs.len() - 3];
    let hh = tape.hermitian(h)?;
    let gram = tape.complex_matmul(h, hh)?; // [.., nt, nt, 2]
    let diag = tape.diag_part(gram)?; // [.., nt, 2]
    for (i, pair) in tape.value(diag).data().chunks_exact(2).enumerate() {
        if pair[0] == R::zero() && pair[1] == R::zero() {
            return Err(Error::SingularMatrix {
                op: "zf_neumann",
                det: 0.0,
                context: format!(" (zero diagonal entry {} of H H^H)", i),
            });
        }
    }
    let dinv = tape.complex_reciprocal(diag)?;
    // off-diagonal part E via a constant 0/1 mask
    let gs = tape.shape(gram).to_vec();
    let batch: usize = gs[..gs.len() - 3].iter().product();
    let mut mask = Tensor::<R>::zeros(&gs);
    for b in 0..batch {
        for i in 0..nt {
            for j in 0..nt {
                if i != j {
                    let o = ((b * nt + i) * nt + j) * 2;
                    mask.data_mut()[o] = R::one();
                    mask.data_mut()[o + 1] = R::one();
                }
            }
        }
    }
    let maskv = tape.constant(mask);
    let e = tape.mul(gram, maskv)?;
    let dinv_e = tape.complex_scale_rows(e, dinv)?;
    let m = tape.scale(dinv_e, -R::one());
    Ok(NeumannParts { m, dinv, hh })
}

/// k-term Neumann ZF in matrix form:
/// W ~= H^H [sum_{n=0}^{k-1} (-D^-1 E)^n] D^-1 with D = diag(H H^H).
pub fn zf_neumann_matrix<R: Real>(tape: &mut Tape<R>, h: VarId, k: usize) -> Result<VarId> {
    if k == 0 {
        return Err(Error::InvalidArgument("neumann terms k must be >= 1".into()));
    }
    let parts = neumann_parts(tape, h)?;
    let gs = tape.shape(parts.m).to_vec();
    let nt = gs[gs.len() - 2];
    let batch: usize = gs[..gs.len() - 3].iter().product();
    let mut eye = Tensor::<R>::zeros(&gs);
    for b in 0..batch {
        for i in 0..nt {
            eye.data_mut()[((b * nt + i) * nt + i) * 2] = R::one();
        }
    }
    let mut acc = tape.constant(eye);
    let mut cur = acc;
    for _ in 1..k {
        cur = tape.complex_matmul(parts.m, cur)?;
        acc = tape.add(acc, cur)?;
    }
    // W = H^H . acc . D^-1; right-multiplication by the diagonal D^-1 is a
    // row scaling of the hermitian transpose
    let hs_acc = tape.complex_matmul(parts.hh, acc)?; // [.., nr, nt, 2]
    let t = tape.hermitian(hs_acc)?; // [.., nt, nr, 2]
    let dconj = tape.conj(parts.dinv)?;
    let scaled = tape.complex_scale_rows(t, dconj)?;
    tape.hermitian(scaled)
}

/// k-term Neumann ZF applied directly to a symbol vector without forming W:
/// x ~= H^H [z + (-D^-1 E) z + ... + (-D^-1 E)^{k-1} z], z = D^-1 s.
/// h: [.., n_tx, n_rx, 2], s: [.., n_tx, 2] -> [.., n_rx, 2].
pub fn zf_neumann_apply<R: Real>(
    tape: &mut Tape<R>,
    h: VarId,
    s: VarId,
    k: usize,
) -> Result<VarId> {
    if k == 0 {
        return Err(Error::InvalidArgument("neumann terms k must be >= 1".into()));
    }
    let parts = neumann_parts(tape, h)?;
    let ss = tape.shape(s).to_vec();
    if ss.last() != Some(&2) {
        return Err(Error::ShapeMismatch {
            op: "zf_neumann_apply",
            detail: format!("symbols must end in complex axis, got {:?}", ss),
        });
    }
    let nt = ss[ss.len() - 2];
    let batch: usize = ss[..ss.len() - 2].iter().product();
    let z = tape.complex_mul_elem(s, parts.dinv)?;
    let mut col_shape = ss[..ss.len() - 2].to_vec();
    col_shape.extend_from_slice(&[nt, 1, 2]);
    let mut cur = tape.reshape(z, &col_shape)?;
    let mut acc = cur;
    for _ in 1..k {
        cur = tape.complex_matmul(parts.m, cur)?;
        acc = tape.add(acc, cur)?;
    }
    let x = tape.complex_matmul(parts.hh, acc)?; // [.., nr, 1, 2]
    let xs = tape.shape(x);
    let nr = xs[xs.len() - 3];
    let mut out_shape = ss[..ss.len() - 2].to_vec();
    out_shape.extend_from_slice(&[nr, 2]);
    let _ = batch;
    tape.reshape(x, &out_shape)
}

/// Apply per-RE precoders to a symbol grid:
/// w: [s, f, n_rx, n_tx, 2], sym: [s, f, n_tx, 2] -> [s, f, n_rx, 2].
pub fn precode<R: Real>(tape: &mut Tape<R>, w: VarId, sym: VarId) -> Result<VarId> {
    crate::phy::apply_channel(tape, w, sym)
}

/// Scale the whole grid to L2 norm `a` (single global scalar).
pub fn normalize_grid<R: Real>(tape: &mut Tape<R>, x: VarId, a: f64) -> Result<VarId> {
    if a <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "target norm must be positive, got {a}"
        )));
    }
    let sq = tape.abs_squared(x)?;
    let n2 = tape.reduce_sum(sq);
    if tape.value(n2).item() <= R::zero() {
        return Err(Error::InvalidArgument(
            "cannot normalize an all-zero transmit grid".into(),
        ));
    }
    let norm = tape.sqrt(n2);
    let inv = tape.reciprocal(norm);
    let factor = tape.affine(inv, R::from_f64_lossy(a), R::zero());
    tape.scalar_mul(factor, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{complex_constant, draw_unit_noise};
    use num_complex::Complex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_h(rng: &mut ChaCha8Rng, batch: usize, nt: usize, nr: usize) -> Tensor<f64> {
        draw_unit_noise::<f64>(&[batch, nt, nr, 2], rng)
    }

    #[test]
    fn zf_of_padded_identity() {
        // H = [I2 | 0] (2x4) -> W = [I2 ; 0] (4x2)
        let mut vals = vec![Complex::new(0.0, 0.0); 8];
        vals[0] = Complex::new(1.0, 0.0); // H[0,0]
        vals[5] = Complex::new(1.0, 0.0); // H[1,1]
        let h = complex_constant::<f64>(&[1, 2, 4], &vals);
        let mut t = Tape::new();
        let hv = t.constant(h);
        let w = zf_exact(&mut t, hv).unwrap();
        let wd = t.value(w).data();
        assert_eq!(t.shape(w), &[1, 4, 2, 2]);
        for i in 0..4 {
            for j in 0..2 {
                let re = wd[(i * 2 + j) * 2];
                let im = wd[(i * 2 + j) * 2 + 1];
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((re - want).abs() < 1e-12 && im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zf_pseudoinverse_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let h = random_h(&mut rng, 3, 2, 4);
            let mut t = Tape::new();
            let hv = t.constant(h);
            let w = zf_exact(&mut t, hv).unwrap();
            let prod = t.complex_matmul(hv, w).unwrap();
            let p = t.value(prod).data();
            for b in 0..3 {
                for i in 0..2 {
                    for j in 0..2 {
                        let o = ((b * 2 + i) * 2 + j) * 2;
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!(
                            (p[o] - want).abs() < 1e-10 && p[o + 1].abs() < 1e-10,
                            "H W != I at batch {b} ({i},{j})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn neumann_equals_exact_for_orthogonal_rows() {
        // rows of H orthogonal -> H H^H diagonal -> E = 0 -> any k exact
        let vals = vec![
            Complex::new(1.0, 0.5),
            Complex::new(0.0, 0.0),
            Complex::new(-0.3, 0.2),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.7, -0.1),
            Complex::new(0.0, 0.0),
            Complex::new(0.4, 0.8),
        ];
        let h = complex_constant::<f64>(&[1, 2, 4], &vals);
        let mut t = Tape::new();
        let hv = t.constant(h);
        let exact = zf_exact(&mut t, hv).unwrap();
        for k in [1usize, 2, 5] {
            let approx = zf_neumann_matrix(&mut t, hv, k).unwrap();
            for (a, b) in t.value(approx).data().iter().zip(t.value(exact).data()) {
                assert!((a - b).abs() < 1e-11, "k={k}");
            }
        }
    }

    #[test]
    fn neumann_two_terms_matches_hand_expansion() {
        // k = 2: W = H^H (I - D^-1 E) D^-1
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = random_h(&mut rng, 4, 2, 4);
        let mut t = Tape::new();
        let hv = t.constant(h.clone());
        let w2 = zf_neumann_matrix(&mut t, hv, 2).unwrap();
        let got = t.value(w2).data().to_vec();

        // independent dense complex computation
        let hd = h.data();
        let at = |b: usize, i: usize, j: usize| {
            let o = ((b * 2 + i) * 4 + j) * 2;
            Complex::new(hd[o], hd[o + 1])
        };
        for b in 0..4 {
            // A = H H^H (2x2)
            let mut a = [[Complex::new(0.0, 0.0); 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    for l in 0..4 {
                        a[i][j] += at(b, i, l) * at(b, j, l).conj();
                    }
                }
            }
            let d = [a[0][0], a[1][1]];
            // B = (I - D^-1 E) D^-1, E = offdiag
            let mut bmat = [[Complex::new(0.0, 0.0); 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    let iterm = if i == j { Complex::new(1.0, 0.0) } else { Complex::new(0.0, 0.0) };
                    let eterm = if i == j { Complex::new(0.0, 0.0) } else { a[i][j] / d[i] };
                    bmat[i][j] = (iterm - eterm) / d[j];
                }
            }
            for r in 0..4 {
                for c in 0..2 {
                    let mut want = Complex::new(0.0, 0.0);
                    for l in 0..2 {
                        want += at(b, l, r).conj() * bmat[l][c];
                    }
                    let o = ((b * 4 + r) * 2 + c) * 2;
                    assert!(
                        (got[o] - want.re).abs() < 1e-10 && (got[o + 1] - want.im).abs() < 1e-10,
                        "batch {b} ({r},{c}): ({}, {}) vs {want}",
                        got[o],
                        got[o + 1]
                    );
                }
            }
        }
    }

    #[test]
    fn neumann_apply_matches_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for trial in 0..200 {
            let k = 1 + (trial % 6);
            let h = random_h(&mut rng, 2, 2, 4);
            let s = draw_unit_noise::<f64>(&[2, 2, 2], &mut rng);
            let mut t = Tape::new();
            let hv = t.constant(h);
            let sv = t.constant(s);
            let w = zf_neumann_matrix(&mut t, hv, k).unwrap();
            let sc = t.reshape(sv, &[2, 2, 1, 2]).unwrap();
            let want = t.complex_matmul(w, sc).unwrap();
            let got = zf_neumann_apply(&mut t, hv, sv, k).unwrap();
            for (a, b) in t.value(got).data().iter().zip(t.value(want).data()) {
                assert!((a - b).abs() < 1e-10, "k={k} trial={trial}");
            }
        }
    }

    #[test]
    fn neumann_apply_first_term_and_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let h = random_h(&mut rng, 1, 2, 4);
        let s = draw_unit_noise::<f64>(&[1, 2, 2], &mut rng);
        let mut t = Tape::new();
        let hv = t.constant(h.clone());
        let sv = t.constant(s.clone());
        // k = 1: x = H^H D^-1 s
        let got = zf_neumann_apply(&mut t, hv, sv, 1).unwrap();
        let hd = h.data();
        let at = |i: usize, j: usize| Complex::new(hd[(i * 4 + j) * 2], hd[(i * 4 + j) * 2 + 1]);
        let mut d = [Complex::new(0.0, 0.0); 2];
        for i in 0..2 {
            for l in 0..4 {
                d[i] += at(i, l) * at(i, l).conj();
            }
        }
        for r in 0..4 {
            let mut want = Complex::new(0.0, 0.0);
            for i in 0..2 {
                let si = Complex::new(s.data()[(i) * 2], s.data()[i * 2 + 1]);
                want += at(i, r).conj() * si / d[i];
            }
            let o = r * 2;
            let g = t.value(got).data();
            assert!((g[o] - want.re).abs() < 1e-12 && (g[o + 1] - want.im).abs() < 1e-12);
        }
        // s = 0 -> x = 0
        let zero = t.constant(Tensor::<f64>::zeros(&[1, 2, 2]));
        let x0 = zf_neumann_apply(&mut t, hv, zero, 3).unwrap();
        assert!(t.value(x0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_grid_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let x = draw_unit_noise::<f64>(&[3, 4, 2, 2], &mut rng);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let y = normalize_grid(&mut t, xv, 1.0).unwrap();
        let norm = t.value(y).l2_norm();
        assert!((norm - 1.0).abs() < 1e-12);
        // scale invariance of the output
        let xs = t.scale(xv, 5.0);
        let y5 = normalize_grid(&mut t, xs, 1.0).unwrap();
        for (a, b) in t.value(y5).data().iter().zip(t.value(y).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // target norm 2
        let y2 = normalize_grid(&mut t, xv, 2.0).unwrap();
        assert!((t.value(y2).l2_norm() - 2.0).abs() < 1e-12);
        // all-zero input is an error
        let z = t.constant(Tensor::<f64>::zeros(&[3, 4, 2, 2]));
        assert!(normalize_grid(&mut t, z, 1.0).is_err());
    }

    #[test]
    fn gradients_flow_through_zf_and_neumann_apply() {
        use crate::autodiff::finite_difference_check;
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 61);
            let mut h = random_h(&mut rng, 2, 2, 4);
            // keep H comfortably full-rank for the FD sweep
            for b in 0..2 {
                for i in 0..2 {
                    h.data_mut()[((b * 2 + i) * 4 + i) * 2] += 2.0;
                }
            }
            let w = draw_unit_noise::<f64>(&[2, 4, 2, 2], &mut rng);
            let werr = finite_difference_check(
                &|t: &mut Tape<f64>, x| {
                    let wv = zf_exact(t, x)?;
                    let wc = t.constant(w.clone());
                    let p = t.mul(wv, wc)?;
                    Ok(t.reduce_sum(p))
                },
                &h,
                1e-5,
            )
            .unwrap();
            assert!(werr < 1e-5, "zf_exact grad err {werr:.2e}");

            let s = draw_unit_noise::<f64>(&[2, 2, 2], &mut rng);
            let wx = draw_unit_noise::<f64>(&[2, 4, 2], &mut rng);
            let nerr = finite_difference_check(
                &|t: &mut Tape<f64>, x| {
                    let sv = t.constant(s.clone());
                    let xv = zf_neumann_apply(t, x, sv, 3)?;
                    let wc = t.constant(wx.clone());
                    let p = t.mul(xv, wc)?;
                    Ok(t.reduce_sum(p))
                },
                &h,
                1e-5,
            )
            .unwrap();
            assert!(nerr < 1e-5, "zf_neumann_apply grad err {nerr:.2e}");
        }
    }
}
