//! Flat key=value configuration files with typed access and strict
//! unknown-key errors. `#` starts a comment; later keys override earlier
//! ones, which is also how command-line overrides are applied.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{DilationProfile, ModelConfig};
use crate::phy::PatternKind;
use crate::training::{LossMode, Scenario, TrainingConfig, ZfMode};

#[derive(Debug, Default, Clone)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvConfig {
            map,
            used: BTreeSet::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path.as_ref())?)
    }

    /// Apply a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("override must be key=value, got {assignment:?}"))
        })?;
        self.map.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        self.used.insert(key.to_string());
        match self.map.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!("key {key}: cannot parse {raw:?}"))
            }),
        }
    }

    pub fn get_str(&mut self, key: &str, default: &str) -> String {
        self.used.insert(key.to_string());
        self.map
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }

    pub fn get_list_f64(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        self.used.insert(key.to_string());
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("key {key}: bad number {s:?}")))
                })
                .collect(),
        }
    }

    pub fn get_list_usize(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        self.used.insert(key.to_string());
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("key {key}: bad integer {s:?}")))
                })
                .collect(),
        }
    }

    /// Error if any provided key was never consumed (catches typos).
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&String> = self
            .map
            .keys()
            .filter(|k| !self.used.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown configuration keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

pub fn parse_scenario(raw: &str) -> Result<Scenario> {
    match raw.to_ascii_lowercase().as_str() {
        "su" => Ok(Scenario::Su),
        "mu" => Ok(Scenario::Mu),
        other => Err(Error::Config(format!("scenario must be su|mu, got {other:?}"))),
    }
}

pub fn parse_pattern(raw: &str) -> Result<PatternKind> {
    match raw.to_ascii_lowercase().as_str() {
        "dmrs2" => Ok(PatternKind::Dmrs2),
        "srs1" => Ok(PatternKind::Srs1),
        other => Err(Error::Config(format!(
            "pilot pattern must be dmrs2|srs1, got {other:?}"
        ))),
    }
}

pub fn parse_zf_mode(raw: &str) -> Result<ZfMode> {
    let lower = raw.to_ascii_lowercase();
    if lower == "exact" {
        Ok(ZfMode::Exact)
    } else if lower == "none" {
        Ok(ZfMode::None)
    } else if let Some(k) = lower.strip_prefix("neumann:") {
        let k: usize = k
            .parse()
            .map_err(|_| Error::Config(format!("bad neumann term count {k:?}")))?;
        if k == 0 {
            return Err(Error::Config("neumann term count must be >= 1".into()));
        }
        Ok(ZfMode::Neumann(k))
    } else {
        Err(Error::Config(format!(
            "zf_mode must be exact|neumann:<k>|none, got {raw:?}"
        )))
    }
}

pub fn parse_loss_mode(raw: &str) -> Result<LossMode> {
    match raw.to_ascii_lowercase().as_str() {
        "bits" => Ok(LossMode::Bits),
        "l2" | "l2_channel" => Ok(LossMode::L2Channel),
        other => Err(Error::Config(format!("loss_mode must be bits|l2, got {other:?}"))),
    }
}

/// Named model variants; widths/dilations follow the reference table and
/// its ablation rows.
pub fn model_config_from(
    name: &str,
    n_rx: usize,
    n_tx: usize,
    history: usize,
    tau_max: usize,
) -> Result<ModelConfig> {
    let lower = name.to_ascii_lowercase();
    let cfg = match lower.as_str() {
        "table" | "default" | "reference" => ModelConfig::table_default(n_rx, n_tx, history, tau_max),
        "xxs" => ModelConfig::xxs(n_rx, n_tx, history, tau_max),
        "32x11" => ModelConfig::constant_width(32, 11, n_rx, n_tx, history, tau_max),
        "64x11" => ModelConfig::constant_width(64, 11, n_rx, n_tx, history, tau_max),
        "64x21" => ModelConfig::constant_width(64, 21, n_rx, n_tx, history, tau_max),
        "64x41" => ModelConfig::constant_width(64, 41, n_rx, n_tx, history, tau_max),
        "128x11" => ModelConfig::constant_width(128, 11, n_rx, n_tx, history, tau_max),
        "256x11" => ModelConfig::constant_width(256, 11, n_rx, n_tx, history, tau_max),
        "table-short-dilation" => ModelConfig::table_default(n_rx, n_tx, history, tau_max)
            .with_dilation_profile(DilationProfile::Short),
        "table-no-dilation" => ModelConfig::table_default(n_rx, n_tx, history, tau_max)
            .with_dilation_profile(DilationProfile::None),
        other => {
            // custom constant width: "<width>x<depth>"
            if let Some((w, d)) = other.split_once('x') {
                if let (Ok(w), Ok(d)) = (w.parse(), d.parse()) {
                    return Ok(ModelConfig::constant_width(w, d, n_rx, n_tx, history, tau_max));
                }
            }
            return Err(Error::Config(format!("unknown model variant {name:?}")));
        }
    };
    Ok(cfg)
}

/// Assemble a [`TrainingConfig`] from key=value data plus the run seed.
pub fn training_config(kv: &mut KvConfig, seed: u64) -> Result<TrainingConfig> {
    let base = TrainingConfig::desk(seed);
    let cfg = TrainingConfig {
        batch_size: kv.get("batch_size", base.batch_size)?,
        total_samples: kv.get("total_samples", base.total_samples)?,
        learning_rate: kv.get("learning_rate", base.learning_rate)?,
        warmup_iterations: kv.get("warmup_iterations", base.warmup_iterations)?,
        decay_start_frac: kv.get("decay_start_frac", base.decay_start_frac)?,
        blend_window: (
            kv.get("blend_start", base.blend_window.0)?,
            kv.get("blend_end", base.blend_window.1)?,
        ),
        tau_max: kv.get("tau_max", base.tau_max)?,
        snr_ul_range: (
            kv.get("snr_ul_min", base.snr_ul_range.0)?,
            kv.get("snr_ul_max", base.snr_ul_range.1)?,
        ),
        snr_delta_range: (
            kv.get("snr_delta_min", base.snr_delta_range.0)?,
            kv.get("snr_delta_max", base.snr_delta_range.1)?,
        ),
        scenario: parse_scenario(&kv.get_str("scenario", "su"))?,
        ul_pattern: parse_pattern(&kv.get_str("ul_pattern", "dmrs2"))?,
        zf_mode: parse_zf_mode(&kv.get_str("zf_mode", "exact"))?,
        loss_mode: parse_loss_mode(&kv.get_str("loss_mode", "bits"))?,
        seed,
        val_fraction: kv.get("val_fraction", base.val_fraction)?,
        val_interval: kv.get("val_interval", base.val_interval)?,
        val_slots: kv.get("val_slots", base.val_slots)?,
        log_interval: kv.get("log_interval", base.log_interval)?,
        checkpoint_interval: kv.get("checkpoint_interval", base.checkpoint_interval)?,
    };
    cfg.validate()?;
    Ok(cfg)
}
