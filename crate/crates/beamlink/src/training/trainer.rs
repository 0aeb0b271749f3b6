//! The end-to-end training loop: differentiable DL chain, batched gradient
//! accumulation, layerwise-adaptive updates, validation, and metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use super::loss::{blended_loss, LLR_CLAMP};
use super::optimizer::{Lamb, LambConfig};
use super::sample::{
    generate_sample, sample_with, stream_rng, Sample, SampleParams, Scenario,
};
use super::schedule::LrSchedule;
use crate::autodiff::{Real, Tape, Tensor, VarId};
use crate::beamforming::{normalize_grid, precode, zf_exact, zf_neumann_apply};
use crate::channel::ChannelDatabase;
use crate::error::{Error, Result};
use crate::model::{
    l2_activation_penalty, output_to_channel, preprocess, save_checkpoint, PredictorNet,
};
use crate::phy::{
    apply_channel, awgn_with, bit_errors, channel_estimate, compute_llr, draw_unit_noise,
    lmmse_equalize, select_antenna, Constellation, PatternKind, PilotPattern, ResourceGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZfMode {
    Exact,
    /// k-term series approximation applied in vectorized form.
    Neumann(usize),
    /// The network output is used as the precoder directly.
    None,
}

impl ZfMode {
    pub fn name(self) -> String {
        match self {
            ZfMode::Exact => "exact".into(),
            ZfMode::Neumann(k) => format!("neumann{k}"),
            ZfMode::None => "none".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// SNR-weighted EXP -> CE blend on detected bits (the default).
    Bits,
    /// Plain squared error between prediction and true DL channel.
    L2Channel,
}

#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub total_samples: usize,
    pub learning_rate: f64,
    pub warmup_iterations: usize,
    pub decay_start_frac: f64,
    /// EXP -> CE transition window as training-progress fractions.
    pub blend_window: (f64, f64),
    pub tau_max: usize,
    pub snr_ul_range: (f64, f64),
    pub snr_delta_range: (f64, f64),
    pub scenario: Scenario,
    pub ul_pattern: PatternKind,
    pub zf_mode: ZfMode,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub val_fraction: f64,
    pub val_interval: usize,
    pub val_slots: usize,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
}

impl TrainingConfig {
    /// Desk-scale defaults; full-scale values remain selectable.
    pub fn desk(seed: u64) -> Self {
        TrainingConfig {
            batch_size: 8,
            total_samples: 160_000,
            learning_rate: 3.6e-5,
            warmup_iterations: 1600,
            decay_start_frac: 0.3,
            blend_window: (0.90, 0.95),
            tau_max: 6,
            snr_ul_range: (0.0, 35.0),
            snr_delta_range: (1.0, 5.0),
            scenario: Scenario::Su,
            ul_pattern: PatternKind::Dmrs2,
            zf_mode: ZfMode::Exact,
            loss_mode: LossMode::Bits,
            seed,
            val_fraction: 0.1,
            val_interval: 2_000,
            val_slots: 48,
            log_interval: 100,
            checkpoint_interval: 2_000,
        }
    }

    pub fn iterations(&self) -> usize {
        (self.total_samples + self.batch_size - 1) / self.batch_size
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.blend_window;
        if !(0.0..1.0).contains(&a) || !(a..=1.0).contains(&b) || a >= b {
            return Err(Error::Config(format!(
                "blend window must satisfy 0 <= start < end <= 1, got ({a}, {b})"
            )));
        }
        if self.batch_size == 0 || self.total_samples == 0 {
            return Err(Error::Config("batch size and total samples must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Receiver-side context shared by training and evaluation.
pub struct ChainContext<'a> {
    pub dl_pattern: &'a PilotPattern,
    pub constellation: &'a Constellation,
    pub scenario: Scenario,
}

/// Where the DL noise comes from: a stream draw, a fixed unit tensor whose
/// scale tracks the signal power (paired evaluation across methods), or a
/// fully constant pre-scaled tensor with its variance (gradient checks).
pub enum DlNoise<'a, R: Real> {
    Rng(&'a mut ChaCha8Rng),
    Fixed(&'a Tensor<R>),
    FixedScaled(&'a Tensor<R>, f64),
}

#[derive(Debug)]
pub struct Detection {
    /// [n_data_res, n_layers, 4] demapper-convention LLRs (positive -> bit 0).
    pub llr: VarId,
    /// Per-complex-sample DL noise variance used by the receivers.
    pub noise_var: f64,
}

/// Precoding -> power normalization -> DL channel with noise -> per-UE
/// effective-channel estimation -> rescaled LMMSE -> exact LLRs on data REs.
///
/// `w_channel` is the channel handed to the beamformer, [s, f, n_tx, n_rx, 2]
/// for the ZF modes; for `ZfMode::None` it is consumed directly as the
/// precoder, [s, f, n_rx, n_tx, 2].
pub fn dl_detect<R: Real>(
    tape: &mut Tape<R>,
    w_channel: VarId,
    zf_mode: ZfMode,
    h_dl: VarId,
    dl_symbols: VarId,
    snr_dl_db: f64,
    ctx: &ChainContext,
    noise: DlNoise<R>,
) -> Result<Detection> {
    let hs = tape.shape(h_dl).to_vec();
    let (s, f, nt, nr) = (hs[0], hs[1], hs[2], hs[3]);
    let b = s * f;

    // precoded antenna-domain grid
    let x = match zf_mode {
        ZfMode::Exact => {
            let hb = tape.reshape(w_channel, &[b, nt, nr, 2])?;
            let w = zf_exact(tape, hb)?;
            let wz = tape.reshape(w, &[s, f, nr, nt, 2])?;
            precode(tape, wz, dl_symbols)?
        }
        ZfMode::Neumann(k) => {
            let hb = tape.reshape(w_channel, &[b, nt, nr, 2])?;
            let sb = tape.reshape(dl_symbols, &[b, nt, 2])?;
            let xb = zf_neumann_apply(tape, hb, sb, k)?;
            tape.reshape(xb, &[s, f, nr, 2])?
        }
        ZfMode::None => {
            let ws = tape.shape(w_channel).to_vec();
            if ws != [s, f, nr, nt, 2] {
                return Err(Error::ShapeMismatch {
                    op: "dl_detect",
                    detail: format!("direct precoder shape {:?}", ws),
                });
            }
            precode(tape, w_channel, dl_symbols)?
        }
    };
    let a = ((s * f) as f64).sqrt(); // unit average transmit energy per RE
    let x_tx = normalize_grid(tape, x, a)?;

    let y_sig = apply_channel(tape, h_dl, x_tx)?;
    let (y, noise_var) = match noise {
        DlNoise::Rng(rng) => {
            let unit = draw_unit_noise::<R>(tape.shape(y_sig).to_vec().as_slice(), rng);
            awgn_with(tape, y_sig, snr_dl_db, &unit)?
        }
        DlNoise::Fixed(unit) => awgn_with(tape, y_sig, snr_dl_db, unit)?,
        DlNoise::FixedScaled(noise, variance) => {
            let n = tape.constant(noise.clone());
            (tape.add(y_sig, n)?, variance)
        }
    };

    let data_idx = ctx.dl_pattern.data_indices();
    let n_data = data_idx.len();
    let llr = match ctx.scenario {
        Scenario::Su => {
            let layers: Vec<usize> = (0..nt).collect();
            let g = channel_estimate(tape, y, ctx.dl_pattern, &layers)?;
            let (xhat, sig2) = lmmse_equalize(tape, y, g, noise_var)?;
            let xf = tape.reshape(xhat, &[b, nt, 2])?;
            let sf = tape.reshape(sig2, &[b, nt])?;
            let xd = tape.index_select_batch(xf, data_idx.clone())?;
            let sd = tape.index_select_batch(sf, data_idx.clone())?;
            compute_llr(tape, xd, sd, ctx.constellation)?
        }
        Scenario::Mu => {
            let mut per_ue = Vec::with_capacity(nt);
            for ue in 0..nt {
                let y_u = select_antenna(tape, y, ue)?;
                let g_u = channel_estimate(tape, y_u, ctx.dl_pattern, &[ue])?;
                let (xhat, sig2) = lmmse_equalize(tape, y_u, g_u, noise_var)?;
                let xf = tape.reshape(xhat, &[b, 1, 2])?;
                let sf = tape.reshape(sig2, &[b, 1])?;
                let xd = tape.index_select_batch(xf, data_idx.clone())?;
                let sd = tape.index_select_batch(sf, data_idx.clone())?;
                per_ue.push(compute_llr(tape, xd, sd, ctx.constellation)?);
            }
            tape.concat(&per_ue, 1)?
        }
    };
    debug_assert_eq!(tape.shape(llr), &[n_data, nt, 4]);
    Ok(Detection { llr, noise_var })
}

/// Run the predictor on a sample and hand its output to the beamformer.
/// Returns (llr, network output node, parameter ids).
pub fn predict_and_detect<R: Real>(
    tape: &mut Tape<R>,
    net: &mut PredictorNet<R>,
    sample: &Sample,
    zf_mode: ZfMode,
    ctx: &ChainContext,
    training: bool,
    noise: DlNoise<R>,
) -> Result<(Detection, VarId, Vec<VarId>)> {
    let config = net.config.clone();
    let est_ids: Vec<VarId> = sample
        .estimates
        .iter()
        .map(|e| tape.constant(e.cast::<R>()))
        .collect();
    let input = preprocess(tape, &est_ids, sample.tau, &config)?;
    let (out, param_ids) = net.forward(tape, input, training)?;
    let h_pred = output_to_channel(tape, out, &config)?;
    let w_channel = match zf_mode {
        ZfMode::None => h_pred,
        _ => tape.transpose(h_pred, &[0, 1, 3, 2, 4])?,
    };
    let h_dl = tape.constant(sample.h_dl.cast::<R>());
    let grid = ResourceGrid::from_bits(
        ctx.dl_pattern,
        ctx.constellation,
        sample.dl_bits.clone(),
    )?;
    let syms = tape.constant(grid.to_tensor::<R>());
    let det = dl_detect(
        tape,
        w_channel,
        zf_mode,
        h_dl,
        syms,
        sample.snr_dl_db,
        ctx,
        noise,
    )?;
    Ok((det, out, param_ids))
}

pub struct TrainReport {
    pub iterations: usize,
    pub skipped_samples: u64,
    pub final_loss: f64,
    /// (tau, BER) from the final validation pass.
    pub val_ber: Vec<(usize, f64)>,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

const STREAM_TRAIN: u64 = 1;
const STREAM_VAL: u64 = 2;
const MAX_RESAMPLE_ATTEMPTS: u64 = 8;

/// Split the database into train/validation index pools.
pub fn split_pools(db_len: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let val = ((db_len as f64 * val_fraction).round() as usize)
        .max(1)
        .min(db_len.saturating_sub(1).max(1));
    let cut = db_len - val;
    ((0..cut).collect(), (cut..db_len).collect())
}

/// Train `net` on samples drawn from `db`, writing metrics and checkpoints
/// under `out_dir`. Single-threaded and deterministic in the config seed.
pub fn train(
    db: &ChannelDatabase,
    net: &mut PredictorNet<f32>,
    cfg: &TrainingConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    cfg.validate()?;
    net.config.validate()?;
    let grid = db.grid();
    if net.config.n_rx != grid.n_rx || net.config.n_tx != grid.n_tx {
        return Err(Error::Config(format!(
            "model is {}x{}, database is {}x{}",
            net.config.n_rx, net.config.n_tx, grid.n_rx, grid.n_tx
        )));
    }
    if net.config.tau_max != cfg.tau_max {
        return Err(Error::Config(format!(
            "model tau_max {} vs training tau_max {}",
            net.config.tau_max, cfg.tau_max
        )));
    }
    if db.n_slots() < net.config.history + cfg.tau_max {
        return Err(Error::Config(format!(
            "database has {} slots, history {} + tau_max {} needs more",
            db.n_slots(),
            net.config.history,
            cfg.tau_max
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let constellation = Constellation::qam16();
    let ul_pattern = PilotPattern::new(cfg.ul_pattern, grid.s, grid.f, grid.n_tx)?;
    let dl_pattern = PilotPattern::new(PatternKind::Dmrs2, grid.s, grid.f, grid.n_tx)?;
    let params = SampleParams {
        tau_max: cfg.tau_max,
        history: net.config.history,
        snr_ul_range: cfg.snr_ul_range,
        snr_delta_range: cfg.snr_delta_range,
        scenario: cfg.scenario,
        ul_pattern: &ul_pattern,
        dl_pattern: &dl_pattern,
        constellation: &constellation,
    };
    let ctx = ChainContext {
        dl_pattern: &dl_pattern,
        constellation: &constellation,
        scenario: cfg.scenario,
    };
    let (train_pool, val_pool) = split_pools(db.len(), cfg.val_fraction);

    let iterations = cfg.iterations();
    let schedule = LrSchedule {
        base_lr: cfg.learning_rate,
        warmup_iterations: cfg.warmup_iterations,
        decay_start_frac: cfg.decay_start_frac,
        total_iterations: iterations,
    };
    let mut opt = Lamb::new(LambConfig::default(), &net.params);

    let metrics_path = out_dir.join("metrics.csv");
    let checkpoint_path = out_dir.join("model.dtxm");
    let opt_path = out_dir.join("model.dtxo");
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    let tau_cols: Vec<String> = (1..=cfg.tau_max)
        .map(|t| format!("val_ber_tau{t}"))
        .collect();
    writeln!(metrics, "iteration,lr,loss,{}", tau_cols.join(","))?;

    let mut skipped = 0u64;
    let mut last_good: Option<(Vec<crate::model::Param<f32>>, Vec<(Vec<f32>, Vec<f32>)>)> = None;
    let mut loss_acc = 0.0f64;
    let mut loss_n = 0usize;
    let mut final_loss = f64::NAN;
    let mut last_val: Vec<(usize, f64)> = Vec::new();

    for iter in 0..iterations {
        let lr = schedule.at(iter);
        let progress = iter as f64 / iterations.max(1) as f64;
        let mut grads: Vec<Option<Tensor<f32>>> = vec![None; net.params.len()];
        let mut batch_loss = 0.0f64;

        for b in 0..cfg.batch_size {
            let mut attempt = 0u64;
            loop {
                let mut rng = stream_rng(
                    cfg.seed,
                    STREAM_TRAIN,
                    iter as u64,
                    (b as u64) * MAX_RESAMPLE_ATTEMPTS + attempt,
                );
                let sample = generate_sample(db, &train_pool, &params, &mut rng)?;
                match train_step(net, &sample, cfg, &ctx, progress, &mut rng, &mut grads) {
                    Ok(loss) => {
                        batch_loss += loss;
                        break;
                    }
                    Err(Error::SingularMatrix { .. }) if attempt + 1 < MAX_RESAMPLE_ATTEMPTS => {
                        skipped += 1;
                        attempt += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let mean_loss = batch_loss / cfg.batch_size as f64;
        if !mean_loss.is_finite() {
            if let Some((p, s)) = last_good.take() {
                net.params = p;
                net.norm_stats = s;
            }
            let path = out_dir.join("diverged.dtxm");
            save_checkpoint(&path, net)?;
            return Err(Error::Diverged {
                iteration: iter,
                checkpoint: path.display().to_string(),
            });
        }
        opt.step(&mut net.params, &grads, lr)?;
        last_good = Some((net.params.clone(), net.norm_stats.clone()));
        loss_acc += mean_loss;
        loss_n += 1;
        final_loss = mean_loss;

        let do_val = cfg.val_interval > 0
            && ((iter + 1) % cfg.val_interval == 0 || iter + 1 == iterations);
        let do_log = (iter + 1) % cfg.log_interval.max(1) == 0 || iter + 1 == iterations;
        if do_log || do_val {
            let avg = loss_acc / loss_n.max(1) as f64;
            loss_acc = 0.0;
            loss_n = 0;
            let val_cells = if do_val && !val_pool.is_empty() {
                let v = validate(db, &val_pool, net, cfg, &params, &ctx, iter as u64)?;
                last_val = v.clone();
                v.iter().map(|(_, ber)| format!("{ber:.6e}")).collect::<Vec<_>>()
            } else {
                vec![String::new(); cfg.tau_max]
            };
            writeln!(
                metrics,
                "{},{:.8e},{:.6e},{}",
                iter + 1,
                lr,
                avg,
                val_cells.join(",")
            )?;
            metrics.flush()?;
        }
        if skipped > 0 && (iter + 1) % cfg.log_interval.max(1) == 0 {
            eprintln!("[train] {} samples skipped so far (ZF singularities)", skipped);
        }
        if cfg.checkpoint_interval > 0 && (iter + 1) % cfg.checkpoint_interval == 0 {
            save_checkpoint(&checkpoint_path, net)?;
            opt.save(&opt_path)?;
        }
    }

    save_checkpoint(&checkpoint_path, net)?;
    opt.save(&opt_path)?;
    metrics.flush()?;
    Ok(TrainReport {
        iterations,
        skipped_samples: skipped,
        final_loss,
        val_ber: last_val,
        checkpoint_path,
        metrics_path,
    })
}

/// One sample's forward/backward; gradients are accumulated scaled by
/// 1 / batch_size. Returns the unscaled sample loss.
fn train_step(
    net: &mut PredictorNet<f32>,
    sample: &Sample,
    cfg: &TrainingConfig,
    ctx: &ChainContext,
    progress: f64,
    rng: &mut ChaCha8Rng,
    grads: &mut [Option<Tensor<f32>>],
) -> Result<f64> {
    let mut tape = Tape::<f32>::new();
    let (loss, param_ids) = match cfg.loss_mode {
        LossMode::Bits => {
            let (det, out, ids) = predict_and_detect(
                &mut tape,
                net,
                sample,
                cfg.zf_mode,
                ctx,
                true,
                DlNoise::Rng(rng),
            )?;
            // losses consume the bit-1 logit, the negated demapper LLR
            let logit = tape.scale(det.llr, -1.0);
            let bits_loss = blended_loss(
                &mut tape,
                logit,
                &sample.dl_bits,
                sample.snr_dl_db,
                progress,
                cfg.blend_window,
            )?;
            let penalty = l2_activation_penalty(&mut tape, out, net.config.l2_penalty)?;
            (tape.add(bits_loss, penalty)?, ids)
        }
        LossMode::L2Channel => {
            let config = net.config.clone();
            let est_ids: Vec<VarId> = sample
                .estimates
                .iter()
                .map(|e| tape.constant(e.cast::<f32>()))
                .collect();
            let input = preprocess(&mut tape, &est_ids, sample.tau, &config)?;
            let (out, ids) = net.forward(&mut tape, input, true)?;
            let h_pred = output_to_channel(&mut tape, out, &config)?;
            let target = tape.constant(sample.h_dl.cast::<f32>());
            let target_ul = tape.transpose(target, &[0, 1, 3, 2, 4])?;
            let diff = tape.sub(h_pred, target_ul)?;
            let sq = tape.mul(diff, diff)?;
            (tape.reduce_mean(sq), ids)
        }
    };
    let loss_val = tape.value(loss).item() as f64;
    let scaled = tape.scale(loss, 1.0 / cfg.batch_size as f32);
    let mut g = tape.backward(scaled)?;
    for (i, &id) in param_ids.iter().enumerate() {
        if let Some(grad) = g.take(id) {
            match &mut grads[i] {
                Some(acc) => {
                    for (a, &x) in acc.data_mut().iter_mut().zip(grad.data()) {
                        *a += x;
                    }
                }
                None => grads[i] = Some(grad),
            }
        }
    }
    let _ = LLR_CLAMP;
    Ok(loss_val)
}

/// Uncoded BER per tau on the held-out slice with the current parameters.
pub fn validate(
    db: &ChannelDatabase,
    val_pool: &[usize],
    net: &mut PredictorNet<f32>,
    cfg: &TrainingConfig,
    params: &SampleParams,
    ctx: &ChainContext,
    iter: u64,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(cfg.tau_max);
    for tau in 1..=cfg.tau_max {
        let mut errors = 0u64;
        let mut total = 0u64;
        for v in 0..cfg.val_slots {
            let mut rng = stream_rng(cfg.seed, STREAM_VAL, iter << 8 | tau as u64, v as u64);
            let idx = val_pool[(v + tau) % val_pool.len()];
            let realization = db.read(idx)?;
            use rand::Rng;
            let snr_ul = rng.gen_range(cfg.snr_ul_range.0..=cfg.snr_ul_range.1);
            let delta = rng.gen_range(cfg.snr_delta_range.0..=cfg.snr_delta_range.1);
            let sample = sample_with(&realization, params, tau, snr_ul, snr_ul + delta, &mut rng)?;
            let mut tape = Tape::<f32>::new();
            let det = match predict_and_detect(
                &mut tape,
                net,
                &sample,
                cfg.zf_mode,
                ctx,
                false,
                DlNoise::Rng(&mut rng),
            ) {
                Ok((det, _, _)) => det,
                Err(Error::SingularMatrix { .. }) => continue,
                Err(e) => return Err(e),
            };
            errors += bit_errors(tape.value(det.llr), &sample.dl_bits)?;
            total += sample.dl_bits.len() as u64;
        }
        out.push((tau, errors as f64 / total.max(1) as f64));
    }
    Ok(out)
}
