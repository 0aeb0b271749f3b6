//! Time-evolving tapped-delay-line channel model and realization storage.

mod database;
mod generate;
mod profile;

pub use database::{save_database, ChannelDatabase, DB_MAGIC, DB_VERSION};
pub use generate::{
    generate_realization, max_doppler_hz, slot_pair, ChannelRealization, GridSpec,
    RealizationMeta, SPEED_OF_LIGHT,
};
pub use profile::{TdlModel, TdlProfile};
