//! Experiment orchestration: channel database generation, training runs,
//! BER sweeps, Neumann-term sweeps, the channel-prediction ablation, and
//! report rendering.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use beamlink::channel::{
    generate_realization, save_database, ChannelDatabase, GridSpec, TdlModel, TdlProfile,
};
use beamlink::config::{
    model_config_from, parse_pattern, parse_scenario, training_config, KvConfig,
};
use beamlink::eval::{
    ablation_l2, evaluate, evaluate_snr_range, read_csv, write_csv, write_plots,
    BerCell, ExperimentSpec, Method, PlotPoint,
};
use beamlink::model::{load_checkpoint, PredictorNet};
use beamlink::training::{stream_rng, train};

#[derive(Parser)]
#[command(
    name = "beamlink",
    about = "TDD MIMO link simulator with learned channel-prediction beamforming"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a channel realization database.
    GenerateChannels(GenerateArgs),
    /// Train a predictor on a channel database.
    Train(TrainArgs),
    /// Monte-Carlo BER evaluation over methods x tau x SNR.
    Evaluate(EvaluateArgs),
    /// Compare exact ZF against k-term series approximations.
    NeumannSweep(NeumannArgs),
    /// Channel-prediction ablation for an L2-trained predictor.
    AblateL2(AblateArgs),
    /// Re-render plots from a previously written CSV table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// tdl-a | tdl-b | tdl-c | mixed (uniform over the three)
    #[arg(long, default_value = "mixed")]
    model: String,
    /// Number of realizations.
    #[arg(long)]
    count: usize,
    /// Slots (TTIs) per realization.
    #[arg(long, default_value_t = 10)]
    slots: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Resource blocks of 12 subcarriers.
    #[arg(long, default_value_t = 4)]
    prbs: usize,
    #[arg(long, default_value_t = 10.0)]
    delay_spread_min_ns: f64,
    #[arg(long, default_value_t = 300.0)]
    delay_spread_max_ns: f64,
    #[arg(long, default_value_t = 0.0)]
    velocity_min_kmh: f64,
    #[arg(long, default_value_t = 30.0)]
    velocity_max_kmh: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Model variant: table | xxs | 64x11 | <width>x<depth> | ...
    #[arg(long, default_value = "xxs")]
    model: String,
    /// Stacked UL history slots (1..=3).
    #[arg(long, default_value_t = 1)]
    history: usize,
    /// Warm-start from an existing checkpoint.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Override config keys, e.g. --set total_samples=80000.
    #[arg(long = "set")]
    sets: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Checkpoint backing the predictor_* methods.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long = "set")]
    sets: Vec<String>,
}

#[derive(Args)]
struct NeumannArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Model trained with the exact ZF transformation.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional model trained with the k-term approximation (matched row).
    #[arg(long)]
    approx_checkpoint: Option<PathBuf>,
    /// Terms of the approximation trained into --approx-checkpoint.
    #[arg(long, default_value_t = 2)]
    approx_terms: usize,
    /// Series lengths to sweep.
    #[arg(long, default_value = "1,2,4,64")]
    terms: String,
    #[arg(long, default_value_t = 6)]
    tau: usize,
    #[arg(long, default_value = "10,15,20,25")]
    snrs: String,
    #[arg(long, default_value_t = 2000)]
    slots: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Checkpoint of a predictor trained with the plain L2 channel loss.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 256)]
    mse_samples: usize,
    #[arg(long, default_value = "1,3,6")]
    taus: String,
    #[arg(long, default_value = "10,15,20,25")]
    snrs: String,
    #[arg(long, default_value_t = 1000)]
    slots: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// CSV table produced by evaluate/neumann-sweep.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "ber")]
    prefix: String,
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> anyhow::Result<Vec<T>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("bad {what} entry {s:?}"))
        })
        .collect()
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenerateChannels(a) => generate_channels(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::NeumannSweep(a) => run_neumann(a),
        Command::AblateL2(a) => run_ablate(a),
        Command::Report(a) => run_report(a),
    }
}

fn generate_channels(a: GenerateArgs) -> anyhow::Result<()> {
    let grid = GridSpec::desk(a.prbs);
    let models: Vec<TdlModel> = match a.model.to_ascii_lowercase().as_str() {
        "tdl-a" => vec![TdlModel::A],
        "tdl-b" => vec![TdlModel::B],
        "tdl-c" => vec![TdlModel::C],
        "mixed" => vec![TdlModel::A, TdlModel::B, TdlModel::C],
        other => bail!("unknown channel model {other:?} (tdl-a|tdl-b|tdl-c|mixed)"),
    };
    use rayon::prelude::*;
    let realizations: Vec<_> = (0..a.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(a.seed, 4, i as u64, 0);
            use rand::Rng;
            let model = models[rng.gen_range(0..models.len())];
            let profile = TdlProfile::new(model);
            let ds = rng.gen_range(a.delay_spread_min_ns..=a.delay_spread_max_ns);
            let v = rng.gen_range(a.velocity_min_kmh..=a.velocity_max_kmh);
            generate_realization(&profile, ds, v, &grid, a.slots, a.seed.wrapping_add(i as u64))
        })
        .collect::<Result<_, _>>()?;
    save_database(&a.out, &grid, a.slots, &realizations)?;
    println!(
        "wrote {} realizations ({} slots, {} PRBs) to {}",
        a.count,
        a.slots,
        a.prbs,
        a.out.display()
    );
    Ok(())
}

fn load_kv(config: &Option<PathBuf>, sets: &[String]) -> anyhow::Result<KvConfig> {
    let mut kv = match config {
        Some(path) => KvConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => KvConfig::default(),
    };
    for s in sets {
        kv.set(s)?;
    }
    Ok(kv)
}

fn run_train(a: TrainArgs) -> anyhow::Result<()> {
    let db = ChannelDatabase::open(&a.db)?;
    let mut kv = load_kv(&a.config, &a.sets)?;
    let cfg = training_config(&mut kv, a.seed)?;
    kv.finish()?;
    let grid = db.grid();
    let mut net = match &a.init_from {
        Some(path) => {
            let net = load_checkpoint::<f32>(path)?;
            println!(
                "warm start from {} ({} parameters)",
                path.display(),
                net.param_count()
            );
            net
        }
        None => {
            let mc = model_config_from(&a.model, grid.n_rx, grid.n_tx, a.history, cfg.tau_max)?;
            PredictorNet::init(mc, a.seed)?
        }
    };
    println!(
        "training {} parameters for {} iterations (batch {})",
        net.param_count(),
        cfg.iterations(),
        cfg.batch_size
    );
    let report = train(&db, &mut net, &cfg, &a.out)?;
    println!(
        "done: final loss {:.4e}, {} skipped samples, checkpoint {}",
        report.final_loss,
        report.skipped_samples,
        report.checkpoint_path.display()
    );
    for (tau, ber) in &report.val_ber {
        println!("  val BER tau {tau}: {ber:.4e}");
    }
    Ok(())
}

fn build_methods(
    names: &str,
    checkpoint: &Option<PathBuf>,
) -> anyhow::Result<Vec<Method>> {
    let mut out = Vec::new();
    for raw in names.split(',') {
        let name = raw.trim().to_ascii_lowercase();
        let load = || -> anyhow::Result<PredictorNet<f32>> {
            let path = checkpoint
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("method {name} needs --checkpoint"))?;
            Ok(load_checkpoint::<f32>(path)?)
        };
        let m = if name == "zf_ul" {
            Method::ZfUl
        } else if name == "zf_genie" {
            Method::ZfGenie
        } else if let Some(k) = name.strip_prefix("zf_ul_neumann:") {
            Method::ZfUlNeumann(k.parse().context("bad term count")?)
        } else if name == "predictor_zf" {
            Method::PredictorZf(load()?)
        } else if name == "predictor_no_zf" {
            Method::PredictorNoZf(load()?)
        } else if let Some(k) = name.strip_prefix("predictor_neumann:") {
            Method::PredictorNeumann(load()?, k.parse().context("bad term count")?)
        } else {
            bail!("unknown method {name:?}");
        };
        out.push(m);
    }
    Ok(out)
}

fn run_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let db = ChannelDatabase::open(&a.db)?;
    let mut kv = load_kv(&a.config, &a.sets)?;
    let scenario = parse_scenario(&kv.get_str("scenario", "su"))?;
    let ul_pattern = parse_pattern(&kv.get_str("ul_pattern", "dmrs2"))?;
    let taus = kv.get_list_usize("taus", &[1, 3, 6])?;
    let snrs_db = kv.get_list_f64("snrs_db", &[0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])?;
    let slots = kv.get("slots", 1000usize)?;
    let method_names = kv.get_str("methods", "zf_ul,zf_genie");
    let aggregate = kv.get_str("aggregate_snr", "");
    kv.finish()?;

    // resolve all checkpoints before any compute
    let methods = build_methods(&method_names, &a.checkpoint)?;
    let spec = ExperimentSpec {
        scenario,
        ul_pattern,
        taus,
        snrs_db,
        slots,
        seed: a.seed,
    };
    std::fs::create_dir_all(&a.out)?;
    let cells = evaluate(&db, &spec, &methods)?;
    let csv_path = a.out.join("ber.csv");
    write_csv(&csv_path, &cells)?;
    let points: Vec<PlotPoint> = cells.iter().map(PlotPoint::from).collect();
    let plots = write_plots(&a.out, "ber", &points)?;
    report_skips(&cells);
    println!("wrote {} and {} plot(s)", csv_path.display(), plots.len());

    if !aggregate.is_empty() {
        let (lo, hi) = aggregate
            .split_once(':')
            .ok_or_else(|| anyhow::anyhow!("aggregate_snr must be lo:hi"))?;
        let range = (lo.trim().parse()?, hi.trim().parse()?);
        let agg = evaluate_snr_range(&db, &spec, &methods, range)?;
        let agg_path = a.out.join("ber_aggregate.csv");
        write_csv(&agg_path, &agg)?;
        println!(
            "wrote aggregate over {:.0}-{:.0} dB to {}",
            range.0,
            range.1,
            agg_path.display()
        );
    }
    Ok(())
}

fn report_skips(cells: &[BerCell]) {
    let skipped: u64 = cells.iter().map(|c| c.skipped_slots).sum();
    if skipped > 0 {
        eprintln!("note: {skipped} slot evaluations skipped (ZF singularities)");
    }
}

fn run_neumann(a: NeumannArgs) -> anyhow::Result<()> {
    let db = ChannelDatabase::open(&a.db)?;
    let terms: Vec<usize> = parse_list(&a.terms, "terms")?;
    let snrs_db: Vec<f64> = parse_list(&a.snrs, "snr")?;
    let exact_model = load_checkpoint::<f32>(&a.checkpoint)?;
    let mut methods = vec![Method::PredictorZf(exact_model.clone())];
    for &k in &terms {
        // the exact-trained model evaluated with the k-term approximation
        // (the train-exact / test-approx mismatch rows)
        methods.push(Method::PredictorNeumann(exact_model.clone(), k));
    }
    if let Some(path) = &a.approx_checkpoint {
        let matched = load_checkpoint::<f32>(path)?;
        methods.push(Method::PredictorNeumann(matched, a.approx_terms));
    }
    let spec = ExperimentSpec {
        scenario: beamlink::training::Scenario::Su,
        ul_pattern: beamlink::phy::PatternKind::Dmrs2,
        taus: vec![a.tau],
        snrs_db,
        slots: a.slots,
        seed: a.seed,
    };
    std::fs::create_dir_all(&a.out)?;
    let cells = evaluate(&db, &spec, &methods)?;
    let csv_path = a.out.join("neumann.csv");
    write_csv(&csv_path, &cells)?;
    let points: Vec<PlotPoint> = cells.iter().map(PlotPoint::from).collect();
    write_plots(&a.out, "neumann", &points)?;
    report_skips(&cells);
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn run_ablate(a: AblateArgs) -> anyhow::Result<()> {
    let db = ChannelDatabase::open(&a.db)?;
    let net = load_checkpoint::<f32>(&a.checkpoint)?;
    let spec = ExperimentSpec {
        scenario: beamlink::training::Scenario::Su,
        ul_pattern: beamlink::phy::PatternKind::Dmrs2,
        taus: parse_list(&a.taus, "tau")?,
        snrs_db: parse_list(&a.snrs, "snr")?,
        slots: a.slots,
        seed: a.seed,
    };
    std::fs::create_dir_all(&a.out)?;
    let report = ablation_l2(&db, &net, &spec, a.mse_samples)?;
    println!(
        "prediction MSE {:.4e} vs raw-estimate MSE {:.4e}: improvement {:.2} dB",
        report.mse_prediction, report.mse_estimate, report.improvement_db
    );
    let csv_path = a.out.join("ablate_l2.csv");
    write_csv(&csv_path, &report.ber_cells)?;
    let summary = a.out.join("ablate_l2_summary.txt");
    std::fs::write(
        &summary,
        format!(
            "mse_estimate={:.6e}\nmse_prediction={:.6e}\nimprovement_db={:.4}\n",
            report.mse_estimate, report.mse_prediction, report.improvement_db
        ),
    )?;
    println!("wrote {} and {}", csv_path.display(), summary.display());
    Ok(())
}

fn run_report(a: ReportArgs) -> anyhow::Result<()> {
    let points = read_csv(&a.csv)?;
    std::fs::create_dir_all(&a.out)?;
    let plots = write_plots(&a.out, &a.prefix, &points)?;
    println!("wrote {} plot(s) under {}", plots.len(), a.out.display());
    // echo the table so `report` is also a quick viewer
    let mut methods: Vec<String> = points.iter().map(|p| p.method.clone()).collect();
    methods.sort();
    methods.dedup();
    println!("{} rows, methods: {}", points.len(), methods.join(", "));
    Ok(())
}
