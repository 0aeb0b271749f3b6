//! The channel-prediction CNN: 1x1 input convolution, pre-activation ResNet
//! blocks built from two depthwise-separable convolutions each, and a 1x1
//! output convolution mapping back to complex channel planes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{NormStats, Real, Tape, Tensor, VarId};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Param<R: Real> {
    pub name: String,
    pub value: Tensor<R>,
}

/// Running statistics momentum for the per-channel norms.
const NORM_MOMENTUM: f64 = 0.01;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct PredictorNet<R: Real> {
    pub config: ModelConfig,
    pub params: Vec<Param<R>>,
    /// Running (mean, var) per norm layer, two per block, updated in
    /// training mode and frozen at evaluation.
    pub norm_stats: Vec<(Vec<R>, Vec<R>)>,
}

fn uniform_tensor<R: Real>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<R> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| R::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data)
}

impl<R: Real> PredictorNet<R> {
    /// Fan-in-scaled uniform init; the output convolution starts at 1e-2
    /// scale so the initial prediction is near zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut norm_stats = Vec::new();
        let push = |name: String, value: Tensor<R>, params: &mut Vec<Param<R>>| {
            params.push(Param { name, value });
        };

        let cin = config.input_channels();
        let c0 = config.conv_in_channels;
        let bound_in = (6.0 / cin as f64).sqrt();
        push("conv_in.w".into(), uniform_tensor(&mut rng, &[cin, c0], bound_in), &mut params);
        push("conv_in.b".into(), Tensor::zeros(&[c0]), &mut params);

        let mut prev = c0;
        for (i, b) in config.blocks.iter().enumerate() {
            let c = b.channels;
            let taps = b.filter.0 * b.filter.1;
            push(format!("block{i}.norm1.gamma"), Tensor::filled(&[prev], R::one()), &mut params);
            push(format!("block{i}.norm1.beta"), Tensor::zeros(&[prev]), &mut params);
            let bd1 = (6.0 / taps as f64).sqrt();
            push(
                format!("block{i}.dw1.k"),
                uniform_tensor(&mut rng, &[b.filter.0, b.filter.1, prev], bd1),
                &mut params,
            );
            push(format!("block{i}.dw1.b"), Tensor::zeros(&[prev]), &mut params);
            let bp1 = (6.0 / prev as f64).sqrt();
            push(format!("block{i}.pw1.w"), uniform_tensor(&mut rng, &[prev, c], bp1), &mut params);
            push(format!("block{i}.pw1.b"), Tensor::zeros(&[c]), &mut params);

            push(format!("block{i}.norm2.gamma"), Tensor::filled(&[c], R::one()), &mut params);
            push(format!("block{i}.norm2.beta"), Tensor::zeros(&[c]), &mut params);
            push(
                format!("block{i}.dw2.k"),
                uniform_tensor(&mut rng, &[b.filter.0, b.filter.1, c], bd1),
                &mut params,
            );
            push(format!("block{i}.dw2.b"), Tensor::zeros(&[c]), &mut params);
            let bp2 = (6.0 / c as f64).sqrt();
            push(format!("block{i}.pw2.w"), uniform_tensor(&mut rng, &[c, c], bp2), &mut params);
            push(format!("block{i}.pw2.b"), Tensor::zeros(&[c]), &mut params);

            if prev != c {
                let bs = (6.0 / prev as f64).sqrt();
                push(format!("block{i}.skip.w"), uniform_tensor(&mut rng, &[prev, c], bs), &mut params);
                push(format!("block{i}.skip.b"), Tensor::zeros(&[c]), &mut params);
            }
            norm_stats.push((vec![R::zero(); prev], vec![R::one(); prev]));
            norm_stats.push((vec![R::zero(); c], vec![R::one(); c]));
            prev = c;
        }

        let cout = config.output_channels();
        let bout = 1e-2 * (6.0 / prev as f64).sqrt();
        push("conv_out.w".into(), uniform_tensor(&mut rng, &[prev, cout], bout), &mut params);
        push("conv_out.b".into(), Tensor::zeros(&[cout]), &mut params);

        Ok(PredictorNet {
            config,
            params,
            norm_stats,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Run the network on a preprocessed input [s, f, input_channels].
    ///
    /// In training mode the norm layers use batch statistics and the running
    /// buffers are updated; in evaluation they use the frozen buffers.
    /// Returns the output node and the tape ids of every parameter, in
    /// `self.params` order.
    pub fn forward(
        &mut self,
        tape: &mut Tape<R>,
        input: VarId,
        training: bool,
    ) -> Result<(VarId, Vec<VarId>)> {
        let in_shape = tape.shape(input).to_vec();
        if in_shape.len() != 3 || in_shape[2] != self.config.input_channels() {
            return Err(Error::ShapeMismatch {
                op: "predictor_forward",
                detail: format!(
                    "input {:?} vs expected [s, f, {}]",
                    in_shape,
                    self.config.input_channels()
                ),
            });
        }
        let ids: Vec<VarId> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), training))
            .collect();
        let mut cursor = 0usize;
        let mut next = || {
            let id = ids[cursor];
            cursor += 1;
            id
        };

        let w_in = next();
        let b_in = next();
        let mut x = tape.conv2d_pointwise(input, w_in, b_in)?;

        let blocks = self.config.blocks.clone();
        let mut prev = self.config.conv_in_channels;
        for (i, b) in blocks.iter().enumerate() {
            let g1 = next();
            let be1 = next();
            let k1 = next();
            let kb1 = next();
            let pw1 = next();
            let pb1 = next();
            let g2 = next();
            let be2 = next();
            let k2 = next();
            let kb2 = next();
            let pw2 = next();
            let pb2 = next();
            let skip_ids = if prev != b.channels {
                Some((next(), next()))
            } else {
                None
            };

            let t1 = self.norm(tape, x, g1, be1, 2 * i, training)?;
            let t1 = tape.relu(t1);
            let t1 = tape.conv2d_depthwise(t1, k1, kb1, b.dilation)?;
            let t1 = tape.conv2d_pointwise(t1, pw1, pb1)?;

            let t2 = self.norm(tape, t1, g2, be2, 2 * i + 1, training)?;
            let t2 = tape.relu(t2);
            let t2 = tape.conv2d_depthwise(t2, k2, kb2, b.dilation)?;
            let t2 = tape.conv2d_pointwise(t2, pw2, pb2)?;

            let skip = match skip_ids {
                Some((w, bias)) => tape.conv2d_pointwise(x, w, bias)?,
                None => x,
            };
            x = tape.add(skip, t2)?;
            if !tape.value(x).all_finite() {
                return Err(Error::NanActivation { block: i });
            }
            prev = b.channels;
        }

        let w_out = next();
        let b_out = next();
        let out = tape.conv2d_pointwise(x, w_out, b_out)?;
        if !tape.value(out).all_finite() {
            return Err(Error::NanActivation {
                block: blocks.len(),
            });
        }
        Ok((out, ids))
    }

    fn norm(
        &mut self,
        tape: &mut Tape<R>,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        stat_idx: usize,
        training: bool,
    ) -> Result<VarId> {
        let eps = R::from_f64_lossy(NORM_EPS);
        if training {
            let (id, mean, var) = tape.channel_norm(x, gamma, beta, eps, NormStats::FromBatch)?;
            let m = R::from_f64_lossy(NORM_MOMENTUM);
            let stats = &mut self.norm_stats[stat_idx];
            for (r, &b) in stats.0.iter_mut().zip(&mean) {
                *r = *r * (R::one() - m) + b * m;
            }
            for (r, &b) in stats.1.iter_mut().zip(&var) {
                *r = *r * (R::one() - m) + b * m;
            }
            Ok(id)
        } else {
            let (mean, var) = self.norm_stats[stat_idx].clone();
            let (id, _, _) = tape.channel_norm(x, gamma, beta, eps, NormStats::Fixed(mean, var))?;
            Ok(id)
        }
    }
}

/// Assemble the network input from channel-estimate tensors
/// ([s, f, n_rx, n_tx, 2] each, oldest slot first) and the normalized
/// prediction length. No input normalization is applied to the estimates.
pub fn preprocess<R: Real>(
    tape: &mut Tape<R>,
    estimates: &[VarId],
    tau: usize,
    config: &ModelConfig,
) -> Result<VarId> {
    if estimates.len() != config.history {
        return Err(Error::ShapeMismatch {
            op: "preprocess",
            detail: format!(
                "{} history slots provided, model expects {}",
                estimates.len(),
                config.history
            ),
        });
    }
    if tau < 1 || tau > config.tau_max {
        return Err(Error::TauOutOfRange {
            tau,
            max: config.tau_max,
        });
    }
    let shape = tape.shape(estimates[0]).to_vec();
    if shape.len() != 5 || shape[2] != config.n_rx || shape[3] != config.n_tx || shape[4] != 2 {
        return Err(Error::ShapeMismatch {
            op: "preprocess",
            detail: format!("estimate shape {:?}", shape),
        });
    }
    let (s, f) = (shape[0], shape[1]);
    let feat = 2 * config.n_rx * config.n_tx;
    let mut planes = Vec::with_capacity(estimates.len() + 1);
    for &e in estimates {
        if tape.shape(e) != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "preprocess",
                detail: "history slots must share one shape".into(),
            });
        }
        planes.push(tape.reshape(e, &[s, f, feat])?);
    }
    let tau_plane = Tensor::filled(&[s, f, 1], R::from_f64_lossy(tau as f64 / config.tau_max as f64));
    planes.push(tape.constant(tau_plane));
    tape.concat(&planes, 2)
}

/// Reinterpret the network output as a complex channel [s, f, n_rx, n_tx, 2].
pub fn output_to_channel<R: Real>(
    tape: &mut Tape<R>,
    out: VarId,
    config: &ModelConfig,
) -> Result<VarId> {
    let s = tape.shape(out)[0];
    let f = tape.shape(out)[1];
    tape.reshape(out, &[s, f, config.n_rx, config.n_tx, 2])
}

/// Squared-activation penalty on the network output: lambda * mean(out^2).
pub fn l2_activation_penalty<R: Real>(
    tape: &mut Tape<R>,
    out: VarId,
    lambda: f64,
) -> Result<VarId> {
    let sq = tape.mul(out, out)?;
    let mean = tape.reduce_mean(sq);
    Ok(tape.scale(mean, R::from_f64_lossy(lambda)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::draw_unit_noise;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_rx: 4,
            n_tx: 2,
            history: 1,
            tau_max: 6,
            conv_in_channels: 8,
            blocks: vec![
                super::super::config::BlockSpec {
                    channels: 8,
                    filter: (3, 3),
                    dilation: (1, 1),
                },
                super::super::config::BlockSpec {
                    channels: 12,
                    filter: (3, 3),
                    dilation: (1, 1),
                },
            ],
            l2_penalty: 1e-4,
        }
    }

    #[test]
    fn param_count_matches_config() {
        for c in [
            ModelConfig::table_default(4, 2, 1, 6),
            ModelConfig::constant_width(64, 11, 4, 2, 1, 6),
            ModelConfig::xxs(4, 2, 1, 6),
            tiny_config(),
        ] {
            let net = PredictorNet::<f32>::init(c.clone(), 1).unwrap();
            assert_eq!(net.param_count(), c.param_count());
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let mut net = PredictorNet::<f64>::init(tiny_config(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = draw_unit_noise::<f64>(&[6, 12, 4, 2, 2], &mut rng);
        let mut t = Tape::new();
        let ev = t.constant(est.clone());
        let input = preprocess(&mut t, &[ev], 3, &net.config.clone()).unwrap();
        assert_eq!(t.shape(input), &[6, 12, 17]);
        let (out, _) = net.forward(&mut t, input, false).unwrap();
        assert_eq!(t.shape(out), &[6, 12, 16]);
        let h = output_to_channel(&mut t, out, &net.config.clone()).unwrap();
        assert_eq!(t.shape(h), &[6, 12, 4, 2, 2]);

        // identical parameters and input give bit-identical outputs
        let mut net2 = PredictorNet::<f64>::init(tiny_config(), 3).unwrap();
        let mut t2 = Tape::new();
        let ev2 = t2.constant(est);
        let input2 = preprocess(&mut t2, &[ev2], 3, &net2.config.clone()).unwrap();
        let (out2, _) = net2.forward(&mut t2, input2, false).unwrap();
        assert_eq!(t.value(out).data(), t2.value(out2).data());
    }

    #[test]
    fn preprocess_tau_plane() {
        let cfg = tiny_config();
        let mut t = Tape::<f64>::new();
        let zero = t.constant(Tensor::zeros(&[4, 6, 4, 2, 2]));
        let input = preprocess(&mut t, &[zero], 6, &cfg).unwrap();
        let d = t.value(input).data();
        // channel planes zero, tau plane = tau / tau_max = 1
        for re in 0..4 * 6 {
            for c in 0..16 {
                assert_eq!(d[re * 17 + c], 0.0);
            }
            assert_eq!(d[re * 17 + 16], 1.0);
        }
        assert!(preprocess(&mut t, &[zero], 7, &cfg).is_err());
        assert!(preprocess(&mut t, &[zero, zero], 3, &cfg).is_err());
    }

    #[test]
    fn zeroed_output_conv_gives_zero_prediction_and_zf_fails() {
        let mut net = PredictorNet::<f64>::init(tiny_config(), 9).unwrap();
        let w_idx = net.param_index("conv_out.w").unwrap();
        let b_idx = net.param_index("conv_out.b").unwrap();
        net.params[w_idx].value = Tensor::zeros(net.params[w_idx].value.shape());
        net.params[b_idx].value = Tensor::zeros(net.params[b_idx].value.shape());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let est = draw_unit_noise::<f64>(&[4, 6, 4, 2, 2], &mut rng);
        let mut t = Tape::new();
        let ev = t.constant(est);
        let cfg = net.config.clone();
        let input = preprocess(&mut t, &[ev], 2, &cfg).unwrap();
        let (out, _) = net.forward(&mut t, input, false).unwrap();
        assert!(t.value(out).data().iter().all(|&v| v == 0.0));
        let h = output_to_channel(&mut t, out, &cfg).unwrap();
        // zero prediction makes the ZF gram singular
        let ht = t.transpose(h, &[0, 1, 3, 2, 4]).unwrap();
        let hb = t.reshape(ht, &[24, 2, 4, 2]).unwrap();
        let err = crate::beamforming::zf_exact(&mut t, hb).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }));
    }

    #[test]
    fn nan_parameter_reported_with_block() {
        let mut net = PredictorNet::<f64>::init(tiny_config(), 2).unwrap();
        let idx = net.param_index("block1.pw2.w").unwrap();
        net.params[idx].value.data_mut()[0] = f64::NAN;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let est = draw_unit_noise::<f64>(&[4, 6, 4, 2, 2], &mut rng);
        let mut t = Tape::new();
        let ev = t.constant(est);
        let cfg = net.config.clone();
        let input = preprocess(&mut t, &[ev], 1, &cfg).unwrap();
        let err = net.forward(&mut t, input, false).unwrap_err();
        assert!(matches!(err, Error::NanActivation { block: 1 }), "{err:?}");
    }

    #[test]
    fn l2_penalty_scales_quadratically() {
        let mut t = Tape::<f64>::new();
        let zero = t.constant(Tensor::zeros(&[3, 3, 4]));
        let p0 = l2_activation_penalty(&mut t, zero, 1.0).unwrap();
        assert_eq!(t.value(p0).item(), 0.0);
        let ones = t.constant(Tensor::filled(&[3, 3, 4], 1.0));
        let p1 = l2_activation_penalty(&mut t, ones, 1.0).unwrap();
        assert!((t.value(p1).item() - 1.0).abs() < 1e-15);
        let sqrt2 = t.scale(ones, 2f64.sqrt());
        let p2 = l2_activation_penalty(&mut t, sqrt2, 1.0).unwrap();
        assert!((t.value(p2).item() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interior_translation_consistency_dilation_one() {
        // zero-padding the grid must not change interior outputs in eval
        // mode for a dilation-1 config (margin > receptive field / 2)
        let cfg = ModelConfig {
            blocks: tiny_config().blocks[..1].to_vec(),
            ..tiny_config()
        };
        let (rf_s, rf_f) = cfg.receptive_field();
        let margin = (rf_s.max(rf_f) / 2) + 1;
        let mut net = PredictorNet::<f64>::init(cfg.clone(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (s, f) = (10usize, 12usize);
        let est = draw_unit_noise::<f64>(&[s, f, 4, 2, 2], &mut rng);

        let mut t = Tape::new();
        let ev = t.constant(est.clone());
        let input = preprocess(&mut t, &[ev], 2, &cfg).unwrap();
        let (out, _) = net.forward(&mut t, input, false).unwrap();
        let base = t.value(out).clone();

        // embed into a zero-padded grid; tau plane stays constant over it
        let (ps, pf) = (s + 2 * margin, f + 2 * margin);
        let mut padded = Tensor::<f64>::zeros(&[ps, pf, 4, 2, 2]);
        let row = 4 * 2 * 2;
        for si in 0..s {
            for fi in 0..f {
                let src = (si * f + fi) * row;
                let dst = ((si + margin) * pf + (fi + margin)) * row;
                padded.data_mut()[dst..dst + row].copy_from_slice(&est.data()[src..src + row]);
            }
        }
        let mut t2 = Tape::new();
        let ev2 = t2.constant(padded);
        let input2 = preprocess(&mut t2, &[ev2], 2, &cfg).unwrap();
        let (out2, _) = net.forward(&mut t2, input2, false).unwrap();
        let pad_out = t2.value(out2);

        let c_out = cfg.output_channels();
        for si in margin..s {
            if si + margin >= s {
                break;
            }
            for fi in margin..f {
                if fi + margin >= f {
                    break;
                }
                for c in 0..c_out {
                    let a = base.data()[(si * f + fi) * c_out + c];
                    let b = pad_out.data()[((si + margin) * pf + (fi + margin)) * c_out + c];
                    assert!(
                        (a - b).abs() < 1e-5,
                        "interior mismatch at ({si},{fi},{c}): {a} vs {b}"
                    );
                }
            }
        }
    }
}
