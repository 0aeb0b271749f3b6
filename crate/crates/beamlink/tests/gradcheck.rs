//! Finite-difference verification of every tape op at random points.

use std::sync::Arc;

use beamlink::autodiff::{
    finite_difference_check, GatherPlan, NormStats, SoftDemapTables, Tape, Tensor, VarId,
};
use beamlink::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;
const EPS: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data)
}

/// Random tensor bounded away from zero (for kinked or singular ops).
fn rand_tensor_away(rng: &mut ChaCha8Rng, shape: &[usize], min_abs: f64, max_abs: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(min_abs..max_abs)
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Smooth scalar readout: sum(y * w) for a fixed random weight tensor.
fn readout(tape: &mut Tape<f64>, y: VarId, w: &Tensor<f64>) -> Result<VarId> {
    let w = tape.constant(w.clone());
    let p = tape.mul(y, w)?;
    Ok(tape.reduce_sum(p))
}

fn check_all_seeds(
    name: &str,
    mut scenario: impl FnMut(u64) -> (Tensor<f64>, Box<dyn Fn(&mut Tape<f64>, VarId) -> Result<VarId>>),
) {
    for seed in 0..10u64 {
        let (point, f) = scenario(seed);
        let err = finite_difference_check(f.as_ref(), &point, EPS).unwrap();
        assert!(
            err < TOL,
            "{name}: max relative gradient error {err:.3e} at seed {seed}"
        );
    }
}

#[test]
fn fd_spec_example_square() {
    let f = |tape: &mut Tape<f64>, x: VarId| -> Result<VarId> {
        let y = tape.mul(x, x)?;
        Ok(tape.reduce_sum(y))
    };
    let err = finite_difference_check(&f, &Tensor::scalar(3.0), 1e-5).unwrap();
    assert!(err < 1e-8, "x^2 at 3: {err:.3e}");
}

#[test]
fn fd_elementwise_binary() {
    check_all_seeds("add", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[3, 4], -2.0, 2.0);
        let other = rand_tensor(&mut r, &[3, 4], -2.0, 2.0);
        let w = rand_tensor(&mut r, &[3, 4], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let o = t.constant(other.clone());
                let y = t.add(x, o)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("sub_lhs", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[6], -2.0, 2.0);
        let other = rand_tensor(&mut r, &[6], -2.0, 2.0);
        let w = rand_tensor(&mut r, &[6], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let o = t.constant(other.clone());
                let y = t.sub(x, o)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("sub_rhs", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[6], -2.0, 2.0);
        let other = rand_tensor(&mut r, &[6], -2.0, 2.0);
        let w = rand_tensor(&mut r, &[6], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let o = t.constant(other.clone());
                let y = t.sub(o, x)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("mul", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[5], -2.0, 2.0);
        let other = rand_tensor(&mut r, &[5], -2.0, 2.0);
        let w = rand_tensor(&mut r, &[5], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let o = t.constant(other.clone());
                let y = t.mul(x, o)?;
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn fd_affine_and_scalar_mul() {
    check_all_seeds("affine", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[7], -2.0, 2.0);
        let w = rand_tensor(&mut r, &[7], 0.5, 1.5);
        let a = r.gen_range(-2.0..2.0);
        let b = r.gen_range(-1.0..1.0);
        (
            point,
            Box::new(move |t, x| {
                let y = t.affine(x, a, b);
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("scalar_mul_scale", |seed| {
        let mut r = rng(seed);
        let point = Tensor::scalar(r.gen_range(0.5..2.0));
        let big = rand_tensor(&mut r, &[4], -2.0, 2.0);
        let w = rand_tensor(&mut r, &[4], 0.5, 1.5);
        (
            point,
            Box::new(move |t, s| {
                let x = t.constant(big.clone());
                let y = t.scalar_mul(s, x)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("scalar_mul_tensor", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[4], -2.0, 2.0);
        let s = Tensor::scalar(r.gen_range(0.5..2.0));
        let w = rand_tensor(&mut r, &[4], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let sv = t.leaf(s.clone(), false);
                let y = t.scalar_mul(sv, x)?;
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn fd_unary_smooth() {
    let cases: Vec<(&str, fn(&mut Tape<f64>, VarId) -> VarId, f64, f64)> = vec![
        ("sigmoid", |t, x| t.sigmoid(x), -2.5, 2.5),
        ("softplus", |t, x| t.softplus(x), -2.5, 2.5),
        ("exp", |t, x| t.exp(x), -1.5, 1.5),
    ];
    for (name, op, lo, hi) in cases {
        check_all_seeds(name, |seed| {
            let mut r = rng(seed);
            let point = rand_tensor(&mut r, &[6], lo, hi);
            let w = rand_tensor(&mut r, &[6], 0.5, 1.5);
            (
                point,
                Box::new(move |t, x| {
                    let y = op(t, x);
                    readout(t, y, &w)
                }),
            )
        });
    }
    let positive: Vec<(&str, fn(&mut Tape<f64>, VarId) -> VarId)> = vec![
        ("log", |t, x| t.log(x)),
        ("sqrt", |t, x| t.sqrt(x)),
        ("reciprocal", |t, x| t.reciprocal(x)),
    ];
    for (name, op) in positive {
        check_all_seeds(name, |seed| {
            let mut r = rng(seed);
            let point = rand_tensor(&mut r, &[6], 0.4, 2.0);
            let w = rand_tensor(&mut r, &[6], 0.5, 1.5);
            (
                point,
                Box::new(move |t, x| {
                    let y = op(t, x);
                    readout(t, y, &w)
                }),
            )
        });
    }
}

#[test]
fn fd_relu_and_clamp_off_kink() {
    check_all_seeds("relu", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor_away(&mut r, &[8], 0.1, 2.0);
        let w = rand_tensor(&mut r, &[8], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.relu(x);
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("clamp", |seed| {
        let mut r = rng(seed);
        // keep samples away from the clamp edges at +-0.8
        let data: Vec<f64> = (0..8)
            .map(|_| {
                let v: f64 = r.gen_range(-2.0..2.0);
                if (v.abs() - 0.8).abs() < 0.05 {
                    v + 0.1
                } else {
                    v
                }
            })
            .collect();
        let point = Tensor::from_vec(&[8], data);
        let w = rand_tensor(&mut r, &[8], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.clamp(x, -0.8, 0.8);
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn fd_abs_squared_and_conj() {
    check_all_seeds("abs_squared", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[5, 2], -2.0, 2.0);
        let w = rand_tensor(&mut r, &[5], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.abs_squared(x)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("conj", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[5, 2], -2.0, 2.0);
        let w = rand_tensor(&mut r, &[5, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.conj(x)?;
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn fd_matmul_real() {
    check_all_seeds("matmul_lhs", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[3, 4], -1.5, 1.5);
        let b = rand_tensor(&mut r, &[4, 2], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[3, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let bv = t.constant(b.clone());
                let y = t.matmul(x, bv)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("matmul_rhs", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[4, 2], -1.5, 1.5);
        let a = rand_tensor(&mut r, &[3, 4], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[3, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let av = t.constant(a.clone());
                let y = t.matmul(av, x)?;
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn fd_complex_matmul() {
    check_all_seeds("complex_matmul_lhs", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[2, 2, 3, 2], -1.5, 1.5);
        let b = rand_tensor(&mut r, &[2, 3, 2, 2], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[2, 2, 2, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let bv = t.constant(b.clone());
                let y = t.complex_matmul(x, bv)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("complex_matmul_rhs_unbatched", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[3, 2, 2], -1.5, 1.5);
        let a = rand_tensor(&mut r, &[4, 2, 3, 2], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[4, 2, 2, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let av = t.constant(a.clone());
                let y = t.complex_matmul(av, x)?;
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn fd_hermitian_diag_scale_rows() {
    check_all_seeds("hermitian", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[2, 3, 2, 2], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[2, 2, 3, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.hermitian(x)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("diag_part", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[2, 3, 3, 2], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[2, 3, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.diag_part(x)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("complex_scale_rows_mat", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[2, 3, 4, 2], -1.5, 1.5);
        let s = rand_tensor(&mut r, &[2, 3, 2], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[2, 3, 4, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let sv = t.constant(s.clone());
                let y = t.complex_scale_rows(x, sv)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("complex_scale_rows_scale", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[2, 3, 2], -1.5, 1.5);
        let m = rand_tensor(&mut r, &[2, 3, 4, 2], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[2, 3, 4, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let mv = t.constant(m.clone());
                let y = t.complex_scale_rows(mv, x)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("complex_mul_elem", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[6, 2], -1.5, 1.5);
        let o = rand_tensor(&mut r, &[6, 2], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[6, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let ov = t.constant(o.clone());
                let y = t.complex_mul_elem(x, ov)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("complex_reciprocal", |seed| {
        let mut r = rng(seed);
        // magnitudes in [0.7, 2.2]: bounded away from the pole
        let n = 5usize;
        let mut data = Vec::with_capacity(n * 2);
        for _ in 0..n {
            let mag = r.gen_range(0.7..2.2);
            let ph = r.gen_range(0.0..std::f64::consts::TAU);
            data.push(mag * ph.cos());
            data.push(mag * ph.sin());
        }
        let point = Tensor::from_vec(&[n, 2], data);
        let w = rand_tensor(&mut r, &[n, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.complex_reciprocal(x)?;
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn fd_small_complex_inverse() {
    for n in [2usize, 3, 4] {
        check_all_seeds("small_complex_inverse", |seed| {
            let mut r = rng(seed * 31 + n as u64);
            // diagonally dominant, comfortably invertible
            let mut m = rand_tensor(&mut r, &[2, n, n, 2], -0.5, 0.5);
            for b in 0..2 {
                for i in 0..n {
                    m.data_mut()[b * n * n * 2 + (i * n + i) * 2] += 2.5;
                }
            }
            let w = rand_tensor(&mut r, &[2, n, n, 2], 0.5, 1.5);
            (
                m,
                Box::new(move |t, x| {
                    let y = t.small_complex_inverse(x, 0.05)?;
                    readout(t, y, &w)
                }),
            )
        });
    }
}

#[test]
fn fd_convolutions() {
    let (s, f, c) = (5usize, 7usize, 3usize);
    check_all_seeds("conv2d_depthwise_input", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[s, f, c], -1.5, 1.5);
        let k = rand_tensor(&mut r, &[3, 3, c], -1.0, 1.0);
        let b = rand_tensor(&mut r, &[c], -0.5, 0.5);
        let w = rand_tensor(&mut r, &[s, f, c], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let kv = t.constant(k.clone());
                let bv = t.constant(b.clone());
                let y = t.conv2d_depthwise(x, kv, bv, (2, 3))?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("conv2d_depthwise_kernel", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[3, 3, c], -1.0, 1.0);
        let xv = rand_tensor(&mut r, &[s, f, c], -1.5, 1.5);
        let b = rand_tensor(&mut r, &[c], -0.5, 0.5);
        let w = rand_tensor(&mut r, &[s, f, c], 0.5, 1.5);
        (
            point,
            Box::new(move |t, k| {
                let x = t.constant(xv.clone());
                let bv = t.constant(b.clone());
                let y = t.conv2d_depthwise(x, k, bv, (1, 2))?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("conv2d_depthwise_bias", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[c], -0.5, 0.5);
        let xv = rand_tensor(&mut r, &[s, f, c], -1.5, 1.5);
        let k = rand_tensor(&mut r, &[3, 3, c], -1.0, 1.0);
        let w = rand_tensor(&mut r, &[s, f, c], 0.5, 1.5);
        (
            point,
            Box::new(move |t, b| {
                let x = t.constant(xv.clone());
                let kv = t.constant(k.clone());
                let y = t.conv2d_depthwise(x, kv, b, (1, 1))?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("conv2d_pointwise_input", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[s, f, c], -1.5, 1.5);
        let k = rand_tensor(&mut r, &[c, 4], -1.0, 1.0);
        let b = rand_tensor(&mut r, &[4], -0.5, 0.5);
        let w = rand_tensor(&mut r, &[s, f, 4], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let kv = t.constant(k.clone());
                let bv = t.constant(b.clone());
                let y = t.conv2d_pointwise(x, kv, bv)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("conv2d_pointwise_kernel", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[c, 4], -1.0, 1.0);
        let xv = rand_tensor(&mut r, &[s, f, c], -1.5, 1.5);
        let b = rand_tensor(&mut r, &[4], -0.5, 0.5);
        let w = rand_tensor(&mut r, &[s, f, 4], 0.5, 1.5);
        (
            point,
            Box::new(move |t, k| {
                let x = t.constant(xv.clone());
                let bv = t.constant(b.clone());
                let y = t.conv2d_pointwise(x, k, bv)?;
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn fd_channel_norm() {
    let (s, f, c) = (4usize, 5usize, 3usize);
    check_all_seeds("channel_norm_batch_input", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[s, f, c], -1.5, 1.5);
        let gamma = rand_tensor(&mut r, &[c], 0.5, 1.5);
        let beta = rand_tensor(&mut r, &[c], -0.5, 0.5);
        let w = rand_tensor(&mut r, &[s, f, c], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let g = t.constant(gamma.clone());
                let b = t.constant(beta.clone());
                let (y, _, _) = t.channel_norm(x, g, b, 1e-5, NormStats::FromBatch)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("channel_norm_gamma", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[c], 0.5, 1.5);
        let xv = rand_tensor(&mut r, &[s, f, c], -1.5, 1.5);
        let beta = rand_tensor(&mut r, &[c], -0.5, 0.5);
        let w = rand_tensor(&mut r, &[s, f, c], 0.5, 1.5);
        (
            point,
            Box::new(move |t, g| {
                let x = t.constant(xv.clone());
                let b = t.constant(beta.clone());
                let (y, _, _) = t.channel_norm(x, g, b, 1e-5, NormStats::FromBatch)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("channel_norm_fixed_input", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[s, f, c], -1.5, 1.5);
        let gamma = rand_tensor(&mut r, &[c], 0.5, 1.5);
        let beta = rand_tensor(&mut r, &[c], -0.5, 0.5);
        let mean: Vec<f64> = (0..c).map(|_| r.gen_range(-0.3..0.3)).collect();
        let var: Vec<f64> = (0..c).map(|_| r.gen_range(0.5..1.5)).collect();
        let w = rand_tensor(&mut r, &[s, f, c], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let g = t.constant(gamma.clone());
                let b = t.constant(beta.clone());
                let (y, _, _) = t.channel_norm(
                    x,
                    g,
                    b,
                    1e-5,
                    NormStats::Fixed(mean.clone(), var.clone()),
                )?;
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn fd_movement_and_reduction() {
    check_all_seeds("concat", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[3, 2], -1.5, 1.5);
        let o = rand_tensor(&mut r, &[3, 4], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[3, 6], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let ov = t.constant(o.clone());
                let y = t.concat(&[x, ov], 1)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("reshape", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[3, 4], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[12], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.reshape(x, &[12])?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("transpose", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[2, 3, 4], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[4, 2, 3], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.transpose(x, &[2, 0, 1])?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("reduce_sum", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[3, 4], -1.5, 1.5);
        (point, Box::new(move |t, x| Ok(t.reduce_sum(x))))
    });
    check_all_seeds("reduce_mean", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[3, 4], -1.5, 1.5);
        (point, Box::new(move |t, x| Ok(t.reduce_mean(x))))
    });
    check_all_seeds("reduce_sum_last", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[3, 4], -1.5, 1.5);
        let w = rand_tensor(&mut r, &[3], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.reduce_sum_last(x)?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("index_select_batch", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[5, 3], -1.5, 1.5);
        // repeated index exercises scatter-add in the backward
        let idx = Arc::new(vec![0usize, 2, 2, 4]);
        let w = rand_tensor(&mut r, &[4, 3], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.index_select_batch(x, idx.clone())?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("gather_linear", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[4, 2], -1.5, 1.5);
        let mut plan = GatherPlan::new(4, 6);
        for dst in 0..6 {
            let a = r.gen_range(0..4);
            let b = r.gen_range(0..4);
            let w0 = r.gen_range(-1.0..1.0);
            plan.push(dst, a, w0);
            plan.push(dst, b, 1.0 - w0);
        }
        let plan = Arc::new(plan);
        let w = rand_tensor(&mut r, &[6, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let y = t.gather_linear(x, plan.clone())?;
                readout(t, y, &w)
            }),
        )
    });
}

fn qpsk_tables() -> Arc<SoftDemapTables> {
    let s = 1.0 / 2f64.sqrt();
    // bit 0: sign of I (0 => +), bit 1: sign of Q (0 => +)
    let points = vec![(s, s), (s, -s), (-s, s), (-s, -s)];
    let bit0_mask = vec![0b0011, 0b0101];
    Arc::new(SoftDemapTables::new(points, 2, bit0_mask))
}

#[test]
fn fd_qam_llr() {
    check_all_seeds("qam_llr_symbols", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[5, 2], -1.5, 1.5);
        let sigma2 = rand_tensor(&mut r, &[5], 0.2, 1.0);
        let tables = qpsk_tables();
        let w = rand_tensor(&mut r, &[5, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, x| {
                let s = t.constant(sigma2.clone());
                let y = t.qam_llr(x, s, tables.clone())?;
                readout(t, y, &w)
            }),
        )
    });
    check_all_seeds("qam_llr_sigma2", |seed| {
        let mut r = rng(seed);
        let point = rand_tensor(&mut r, &[5], 0.2, 1.0);
        let sym = rand_tensor(&mut r, &[5, 2], -1.5, 1.5);
        let tables = qpsk_tables();
        let w = rand_tensor(&mut r, &[5, 2], 0.5, 1.5);
        (
            point,
            Box::new(move |t, s| {
                let x = t.constant(sym.clone());
                let y = t.qam_llr(x, s, tables.clone())?;
                readout(t, y, &w)
            }),
        )
    });
}

#[test]
fn inverse_times_matrix_is_identity() {
    // complex_matmul(M, small_complex_inverse(M, 0)) = I for well-conditioned M
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let n = 2 + (seed % 3) as usize;
        let mut m = rand_tensor(&mut r, &[n, n, 2], -1.0, 1.0);
        for i in 0..n {
            m.data_mut()[(i * n + i) * 2] += 3.0;
        }
        let mut tape = Tape::new();
        let mv = tape.constant(m);
        let inv = tape.small_complex_inverse(mv, 0.0).unwrap();
        let prod = tape.complex_matmul(mv, inv).unwrap();
        let p = tape.value(prod).data();
        for i in 0..n {
            for j in 0..n {
                let re = p[(i * n + j) * 2];
                let im = p[(i * n + j) * 2 + 1];
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (re - want).abs() < 1e-10 && im.abs() < 1e-10,
                    "M . inv(M) deviates at ({i},{j}): {re} {im}"
                );
            }
        }
    }
}

#[test]
fn complex_matmul_matches_scalar_loop() {
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let (m, k, n) = (3usize, 4usize, 2usize);
        let a = rand_tensor(&mut r, &[m, k, 2], -2.0, 2.0);
        let b = rand_tensor(&mut r, &[k, n, 2], -2.0, 2.0);
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let bv = tape.constant(b.clone());
        let c = tape.complex_matmul(av, bv).unwrap();
        let cd = tape.value(c).data();
        // scalar-loop oracle
        for i in 0..m {
            for j in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for l in 0..k {
                    let (ar, ai) = (a.data()[(i * k + l) * 2], a.data()[(i * k + l) * 2 + 1]);
                    let (br, bi) = (b.data()[(l * n + j) * 2], b.data()[(l * n + j) * 2 + 1]);
                    re += ar * br - ai * bi;
                    im += ar * bi + ai * br;
                }
                assert!((cd[(i * n + j) * 2] - re).abs() < 1e-12);
                assert!((cd[(i * n + j) * 2 + 1] - im).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn small_inverse_matches_adjugate_oracle_2x2() {
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let mut m = rand_tensor(&mut r, &[2, 2, 2], -1.0, 1.0);
        m.data_mut()[0] += 2.0;
        m.data_mut()[6] += 2.0;
        let d = m.data();
        let (a_re, a_im, b_re, b_im) = (d[0], d[1], d[2], d[3]);
        let (c_re, c_im, dd_re, dd_im) = (d[4], d[5], d[6], d[7]);
        // det = ad - bc, inv = adj / det
        let det_re = a_re * dd_re - a_im * dd_im - (b_re * c_re - b_im * c_im);
        let det_im = a_re * dd_im + a_im * dd_re - (b_re * c_im + b_im * c_re);
        let den = det_re * det_re + det_im * det_im;
        let inv_det = (det_re / den, -det_im / den);
        let cmul = |x: (f64, f64), y: (f64, f64)| (x.0 * y.0 - x.1 * y.1, x.0 * y.1 + x.1 * y.0);
        let expect = [
            cmul((dd_re, dd_im), inv_det),
            cmul((-b_re, -b_im), inv_det),
            cmul((-c_re, -c_im), inv_det),
            cmul((a_re, a_im), inv_det),
        ];
        let mut tape = Tape::new();
        let mv = tape.constant(m.clone());
        let inv = tape.small_complex_inverse(mv, 0.0).unwrap();
        let got = tape.value(inv).data();
        for (i, e) in expect.iter().enumerate() {
            assert!((got[2 * i] - e.0).abs() < 1e-12, "seed {seed} entry {i}");
            assert!((got[2 * i + 1] - e.1).abs() < 1e-12, "seed {seed} entry {i}");
        }
    }
}
