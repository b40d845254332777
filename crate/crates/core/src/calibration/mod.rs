//! Rank diagnostics, variance calibration and ambiguity maps for null models.

pub mod ambiguity;
pub mod export;
pub mod sbc;
pub mod stats;
pub mod sweep;
pub mod variance;

pub use ambiguity::{ambiguity_map, ambiguity_map_averaged, AmbiguityMap, Conditioning};
pub use sbc::{sbc_run, sbc_run_multi, SbcOptions, SbcOutcome, SbcReport};
pub use stats::{evaluate_statistic, TestStatistic};
pub use variance::{variance_calibration, variance_ratios, VarianceCalibration};
pub use sweep::{noise_sweep, propagated_bound_check, BoundReport, SweepOptions, SweepProblem, SweepReport, SweepRow};
