//! Monte-Carlo BER evaluation over methods x tau x SNR, with paired slot
//! conditions across methods and deterministic parallel aggregation.

use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor, VarId};
use crate::channel::ChannelDatabase;
use crate::error::{Error, Result};
use crate::model::PredictorNet;
use crate::phy::{
    bit_errors, draw_unit_noise, Constellation, PatternKind, PilotPattern, ResourceGrid,
};
use crate::training::{
    dl_detect, predict_and_detect, sample_with, stream_rng, ChainContext, DlNoise, Sample,
    SampleParams, Scenario, ZfMode,
};

/// UL estimate SNR used during evaluation, relative to the cell's DL SNR.
pub const EVAL_UL_SNR_OFFSET_DB: f64 = -3.0;

const STREAM_EVAL: u64 = 3;

/// A beamforming method under evaluation. Predictor methods carry their
/// checkpoint; baselines use the raw UL estimate or the true channel.
#[derive(Debug, Clone)]
pub enum Method {
    PredictorZf(PredictorNet<f32>),
    PredictorNoZf(PredictorNet<f32>),
    PredictorNeumann(PredictorNet<f32>, usize),
    ZfUl,
    ZfUlNeumann(usize),
    ZfGenie,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::PredictorZf(_) => "predictor_zf".into(),
            Method::PredictorNoZf(_) => "predictor_no_zf".into(),
            Method::PredictorNeumann(_, k) => format!("predictor_neumann{k}"),
            Method::ZfUl => "zf_ul".into(),
            Method::ZfUlNeumann(k) => format!("zf_ul_neumann{k}"),
            Method::ZfGenie => "zf_genie".into(),
        }
    }

    fn history(&self) -> usize {
        match self {
            Method::PredictorZf(n) | Method::PredictorNoZf(n) | Method::PredictorNeumann(n, _) => {
                n.config.history
            }
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub ul_pattern: PatternKind,
    pub taus: Vec<usize>,
    pub snrs_db: Vec<f64>,
    /// Monte-Carlo slots per (method, tau, snr) cell.
    pub slots: usize,
    pub seed: u64,
}

/// One evaluated cell with pooled-bit Wilson interval and per-slot BERs
/// (the latter back slot-level significance tests).
#[derive(Debug, Clone)]
pub struct BerCell {
    pub method: String,
    pub tau: usize,
    pub snr_db: f64,
    pub errors: u64,
    pub bits: u64,
    pub skipped_slots: u64,
    pub slot_bers: Vec<f64>,
}

impl BerCell {
    pub fn ber(&self) -> f64 {
        self.errors as f64 / self.bits.max(1) as f64
    }

    /// 95% Wilson score interval on the pooled bits.
    pub fn wilson(&self) -> (f64, f64) {
        wilson_interval(self.errors, self.bits)
    }

    /// Normal-approximation 95% CI over per-slot BERs (robust to the error
    /// clustering channels induce within a slot).
    pub fn slot_ci(&self) -> (f64, f64) {
        let n = self.slot_bers.len();
        if n < 2 {
            return (0.0, 1.0);
        }
        let mean = self.slot_bers.iter().sum::<f64>() / n as f64;
        let var = self
            .slot_bers
            .iter()
            .map(|b| (b - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        let half = 1.96 * (var / n as f64).sqrt();
        (mean - half, mean + half)
    }
}

pub fn wilson_interval(errors: u64, bits: u64) -> (f64, f64) {
    if bits == 0 {
        return (0.0, 1.0);
    }
    let n = bits as f64;
    let p = errors as f64 / n;
    let z = 1.96f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Paired per-slot conditions shared by every method in a cell.
struct SlotConditions {
    sample: Sample,
    dl_unit_noise: Tensor<f32>,
}

fn slot_conditions(
    db: &ChannelDatabase,
    params: &SampleParams,
    tau: usize,
    snr_db: f64,
    cell_tag: u64,
    slot: usize,
    seed: u64,
) -> Result<SlotConditions> {
    let mut rng = stream_rng(seed, STREAM_EVAL, cell_tag, slot as u64);
    use rand::Rng;
    let idx = rng.gen_range(0..db.len());
    let realization = db.read(idx)?;
    let sample = sample_with(
        &realization,
        params,
        tau,
        snr_db + EVAL_UL_SNR_OFFSET_DB,
        snr_db,
        &mut rng,
    )?;
    let grid = db.grid();
    let dl_unit_noise =
        draw_unit_noise::<f32>(&[grid.s, grid.f, grid.n_tx, 2], &mut rng);
    Ok(SlotConditions {
        sample,
        dl_unit_noise,
    })
}

/// (errors, bits) for one method on one slot; `Ok(None)` marks a slot
/// skipped due to a ZF singularity.
fn run_method_on_slot(
    method: &mut Method,
    conds: &SlotConditions,
    ctx: &ChainContext,
) -> Result<Option<(u64, u64)>> {
    let sample = &conds.sample;
    let mut tape = Tape::<f32>::new();
    let zf_mode = match method {
        Method::PredictorZf(_) | Method::ZfUl | Method::ZfGenie => ZfMode::Exact,
        Method::PredictorNoZf(_) => ZfMode::None,
        Method::PredictorNeumann(_, k) | Method::ZfUlNeumann(k) => ZfMode::Neumann(*k),
    };
    let detection = match method {
        Method::PredictorZf(net) | Method::PredictorNoZf(net) | Method::PredictorNeumann(net, _) =>
        {
            match predict_and_detect(
                &mut tape,
                net,
                sample,
                zf_mode,
                ctx,
                false,
                DlNoise::Fixed(&conds.dl_unit_noise),
            ) {
                Ok((det, _, _)) => det,
                Err(Error::SingularMatrix { .. }) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
        Method::ZfUl | Method::ZfUlNeumann(_) | Method::ZfGenie => {
            let w_channel = match method {
                Method::ZfGenie => tape.constant(sample.h_dl.clone()),
                _ => {
                    let est = tape.constant(sample.estimates.last().unwrap().clone());
                    tape.transpose(est, &[0, 1, 3, 2, 4])?
                }
            };
            let h_dl = tape.constant(sample.h_dl.clone());
            let grid =
                ResourceGrid::from_bits(ctx.dl_pattern, ctx.constellation, sample.dl_bits.clone())?;
            let syms = tape.constant(grid.to_tensor::<f32>());
            match dl_detect(
                &mut tape,
                w_channel,
                zf_mode,
                h_dl,
                syms,
                sample.snr_dl_db,
                ctx,
                DlNoise::Fixed(&conds.dl_unit_noise),
            ) {
                Ok(det) => det,
                Err(Error::SingularMatrix { .. }) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
    };
    let errors = bit_errors(tape.value(detection.llr), &sample.dl_bits)?;
    Ok(Some((errors, sample.dl_bits.len() as u64)))
}

/// Evaluate every method over the tau x SNR grid. Slot conditions are
/// paired across methods; aggregation is order-independent, so the result
/// is deterministic in the seed regardless of thread count.
pub fn evaluate(
    db: &ChannelDatabase,
    spec: &ExperimentSpec,
    methods: &[Method],
) -> Result<Vec<BerCell>> {
    if methods.is_empty() || spec.taus.is_empty() || spec.snrs_db.is_empty() {
        return Ok(Vec::new());
    }
    let grid = db.grid();
    let constellation = Constellation::qam16();
    let ul_pattern = PilotPattern::new(spec.ul_pattern, grid.s, grid.f, grid.n_tx)?;
    let dl_pattern = PilotPattern::new(PatternKind::Dmrs2, grid.s, grid.f, grid.n_tx)?;
    let history = methods.iter().map(|m| m.history()).max().unwrap_or(1);
    let tau_max = *spec.taus.iter().max().unwrap();
    if db.n_slots() < history + tau_max {
        return Err(Error::Config(format!(
            "database has {} slots; history {history} + tau {tau_max} needs more",
            db.n_slots()
        )));
    }
    for m in methods {
        if let Method::PredictorZf(n) | Method::PredictorNoZf(n) | Method::PredictorNeumann(n, _) =
            m
        {
            if n.config.n_rx != grid.n_rx || n.config.n_tx != grid.n_tx {
                return Err(Error::Config(format!(
                    "{}: model is {}x{}, database is {}x{}",
                    m.label(),
                    n.config.n_rx,
                    n.config.n_tx,
                    grid.n_rx,
                    grid.n_tx
                )));
            }
            if tau_max > n.config.tau_max {
                return Err(Error::Config(format!(
                    "{}: tau {} exceeds model tau_max {}",
                    m.label(),
                    tau_max,
                    n.config.tau_max
                )));
            }
        }
    }

    let mut cells = Vec::new();
    for (ti, &tau) in spec.taus.iter().enumerate() {
        for (si, &snr_db) in spec.snrs_db.iter().enumerate() {
            let cell_tag = ((ti as u64) << 32) | si as u64;
            let params = SampleParams {
                tau_max,
                history,
                snr_ul_range: (0.0, 35.0),
                snr_delta_range: (1.0, 5.0),
                scenario: spec.scenario,
                ul_pattern: &ul_pattern,
                dl_pattern: &dl_pattern,
                constellation: &constellation,
            };
            let ctx = ChainContext {
                dl_pattern: &dl_pattern,
                constellation: &constellation,
                scenario: spec.scenario,
            };
            // per-slot results for every method, computed in parallel with
            // per-slot seeds; indexing keeps aggregation deterministic
            let slot_results: Vec<Result<Vec<Option<(u64, u64)>>>> = (0..spec.slots)
                .into_par_iter()
                .map_init(
                    || methods.to_vec(),
                    |local_methods, slot| {
                        let conds =
                            slot_conditions(db, &params, tau, snr_db, cell_tag, slot, spec.seed)?;
                        let mut row = Vec::with_capacity(local_methods.len());
                        for m in local_methods.iter_mut() {
                            row.push(run_method_on_slot(m, &conds, &ctx)?);
                        }
                        Ok(row)
                    },
                )
                .collect();

            let mut per_method: Vec<BerCell> = methods
                .iter()
                .map(|m| BerCell {
                    method: m.label(),
                    tau,
                    snr_db,
                    errors: 0,
                    bits: 0,
                    skipped_slots: 0,
                    slot_bers: Vec::with_capacity(spec.slots),
                })
                .collect();
            for row in slot_results {
                let row = row?;
                for (mi, res) in row.into_iter().enumerate() {
                    match res {
                        Some((e, b)) => {
                            per_method[mi].errors += e;
                            per_method[mi].bits += b;
                            per_method[mi].slot_bers.push(e as f64 / b.max(1) as f64);
                        }
                        None => per_method[mi].skipped_slots += 1,
                    }
                }
            }
            cells.extend(per_method);
        }
    }
    Ok(cells)
}

/// Table-style aggregate: BER pooled over per-slot SNR draws uniform in
/// `range`, one row per method and tau.
pub fn evaluate_snr_range(
    db: &ChannelDatabase,
    spec: &ExperimentSpec,
    methods: &[Method],
    range: (f64, f64),
) -> Result<Vec<BerCell>> {
    let grid = db.grid();
    let constellation = Constellation::qam16();
    let ul_pattern = PilotPattern::new(spec.ul_pattern, grid.s, grid.f, grid.n_tx)?;
    let dl_pattern = PilotPattern::new(PatternKind::Dmrs2, grid.s, grid.f, grid.n_tx)?;
    let history = methods.iter().map(|m| m.history()).max().unwrap_or(1);
    let tau_max = *spec.taus.iter().max().unwrap_or(&1);

    let mut cells = Vec::new();
    for (ti, &tau) in spec.taus.iter().enumerate() {
        let params = SampleParams {
            tau_max,
            history,
            snr_ul_range: (0.0, 35.0),
            snr_delta_range: (1.0, 5.0),
            scenario: spec.scenario,
            ul_pattern: &ul_pattern,
            dl_pattern: &dl_pattern,
            constellation: &constellation,
        };
        let ctx = ChainContext {
            dl_pattern: &dl_pattern,
            constellation: &constellation,
            scenario: spec.scenario,
        };
        let cell_tag = 0xA660_0000u64 | ti as u64;
        let slot_results: Vec<Result<Vec<Option<(u64, u64)>>>> = (0..spec.slots)
            .into_par_iter()
            .map_init(
                || methods.to_vec(),
                |local_methods, slot| {
                    // draw the cell SNR per slot from the range
                    let mut srng = stream_rng(spec.seed, STREAM_EVAL + 7, cell_tag, slot as u64);
                    use rand::Rng;
                    let snr = srng.gen_range(range.0..=range.1);
                    let conds = slot_conditions(db, &params, tau, snr, cell_tag, slot, spec.seed)?;
                    let mut row = Vec::with_capacity(local_methods.len());
                    for m in local_methods.iter_mut() {
                        row.push(run_method_on_slot(m, &conds, &ctx)?);
                    }
                    Ok(row)
                },
            )
            .collect();
        let mut per_method: Vec<BerCell> = methods
            .iter()
            .map(|m| BerCell {
                method: m.label(),
                tau,
                snr_db: (range.0 + range.1) / 2.0,
                errors: 0,
                bits: 0,
                skipped_slots: 0,
                slot_bers: Vec::with_capacity(spec.slots),
            })
            .collect();
        for row in slot_results {
            let row = row?;
            for (mi, res) in row.into_iter().enumerate() {
                match res {
                    Some((e, b)) => {
                        per_method[mi].errors += e;
                        per_method[mi].bits += b;
                        per_method[mi].slot_bers.push(e as f64 / b.max(1) as f64);
                    }
                    None => per_method[mi].skipped_slots += 1,
                }
            }
        }
        cells.extend(per_method);
    }
    Ok(cells)
}

/// Paired one-sided test that method `a` has lower BER than `b` over the
/// same slots: returns the t statistic of the per-slot differences (a - b);
/// values below -1.645 are significant at 95%.
pub fn paired_t_statistic(a: &BerCell, b: &BerCell) -> f64 {
    assert_eq!(a.slot_bers.len(), b.slot_bers.len(), "unpaired cells");
    let n = a.slot_bers.len();
    if n < 2 {
        return 0.0;
    }
    let diffs: Vec<f64> = a
        .slot_bers
        .iter()
        .zip(&b.slot_bers)
        .map(|(x, y)| x - y)
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return if mean < 0.0 { f64::NEG_INFINITY } else { 0.0 };
    }
    mean / (var / n as f64).sqrt()
}

/// Channel-prediction ablation report: MSE of the prediction against the
/// true DL channel vs the raw UL estimate's MSE, plus where that leaves ZF.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub mse_estimate: f64,
    pub mse_prediction: f64,
    pub improvement_db: f64,
    pub ber_cells: Vec<BerCell>,
}

/// Compare prediction MSE against the raw UL-estimate MSE over `n_samples`
/// random draws, then evaluate the predictor-fed ZF BER on the spec grid.
pub fn ablation_l2(
    db: &ChannelDatabase,
    net: &PredictorNet<f32>,
    spec: &ExperimentSpec,
    n_samples: usize,
) -> Result<AblationReport> {
    let grid = db.grid();
    let constellation = Constellation::qam16();
    let ul_pattern = PilotPattern::new(spec.ul_pattern, grid.s, grid.f, grid.n_tx)?;
    let dl_pattern = PilotPattern::new(PatternKind::Dmrs2, grid.s, grid.f, grid.n_tx)?;
    let params = SampleParams {
        tau_max: net.config.tau_max,
        history: net.config.history,
        snr_ul_range: (0.0, 35.0),
        snr_delta_range: (1.0, 5.0),
        scenario: spec.scenario,
        ul_pattern: &ul_pattern,
        dl_pattern: &dl_pattern,
        constellation: &constellation,
    };
    let mut mse_est = 0.0f64;
    let mut mse_pred = 0.0f64;
    let mut count = 0u64;
    let mut local = net.clone();
    for i in 0..n_samples {
        let mut rng = stream_rng(spec.seed, STREAM_EVAL + 13, 0, i as u64);
        use rand::Rng;
        let idx = rng.gen_range(0..db.len());
        let realization = db.read(idx)?;
        let sample = crate::training::sample_from_realization(&realization, &params, &mut rng)?;
        let mut tape = Tape::<f32>::new();
        let est_ids: Vec<VarId> = sample
            .estimates
            .iter()
            .map(|e| tape.constant(e.clone()))
            .collect();
        let cfg = local.config.clone();
        let input = crate::model::preprocess(&mut tape, &est_ids, sample.tau, &cfg)?;
        let (out, _) = local.forward(&mut tape, input, false)?;
        let h_pred = crate::model::output_to_channel(&mut tape, out, &cfg)?;
        // target in UL orientation
        let target = tape.constant(sample.h_dl.clone());
        let target_ul = tape.transpose(target, &[0, 1, 3, 2, 4])?;
        let pd = tape.value(h_pred).data();
        let td = tape.value(target_ul).data();
        let ed = sample.estimates.last().unwrap().data();
        for j in 0..td.len() {
            mse_pred += (pd[j] as f64 - td[j] as f64).powi(2);
            mse_est += (ed[j] as f64 - td[j] as f64).powi(2);
        }
        count += td.len() as u64;
    }
    mse_pred /= count as f64;
    mse_est /= count as f64;
    let ber_cells = evaluate(db, spec, &[Method::PredictorZf(net.clone())])?;
    Ok(AblationReport {
        mse_estimate: mse_est,
        mse_prediction: mse_pred,
        improvement_db: 10.0 * (mse_est / mse_pred).log10(),
        ber_cells,
    })
}
