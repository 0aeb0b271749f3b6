//! The channel-prediction network: configuration, forward pass, checkpoints.

mod checkpoint;
mod config;
mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use config::{dilation_ladder, BlockSpec, DilationProfile, ModelConfig};
pub use net::{l2_activation_penalty, output_to_channel, preprocess, Param, PredictorNet};
