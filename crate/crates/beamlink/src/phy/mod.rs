//! Differentiable OFDM physical-layer building blocks.

mod chain;
mod constellation;
mod grid;
mod pilot;

pub use chain::{
    apply_channel, awgn, awgn_with, ber, bit_errors, channel_estimate, complex_constant,
    compute_llr, draw_unit_noise, llr_oracle, lmmse_equalize, ls_raw, mean_complex_power,
    select_antenna,
};
pub use constellation::{Constellation, BITS_PER_SYMBOL};
pub use grid::ResourceGrid;
pub use pilot::{PatternKind, PilotPattern};
