//! Monte-Carlo evaluation harness and result reporting.

mod evaluate;
mod report;

pub use evaluate::{
    ablation_l2, evaluate, evaluate_snr_range, paired_t_statistic, wilson_interval,
    AblationReport, BerCell, ExperimentSpec, Method, EVAL_UL_SNR_OFFSET_DB,
};
pub use report::{cells_to_csv, read_csv, write_csv, write_plots, PlotPoint, CSV_HEADER};
