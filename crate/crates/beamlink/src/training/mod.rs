//! Sample generation, losses, schedule, optimizer, and the training loop.

mod loss;
mod optimizer;
mod sample;
mod schedule;
mod trainer;

pub use loss::{blend_weight, blended_loss, ce_loss, exp_loss, snr_weight, LLR_CLAMP};
pub use optimizer::{Lamb, LambConfig, OPT_MAGIC, OPT_VERSION};
pub use sample::{
    derive_seed, generate_sample, sample_from_realization, sample_with, stream_rng, ul_estimate,
    Sample, SampleParams, Scenario,
};
pub use schedule::LrSchedule;
pub use trainer::{
    dl_detect, predict_and_detect, split_pools, train, validate, ChainContext, Detection,
    DlNoise, LossMode, TrainReport, TrainingConfig, ZfMode,
};
