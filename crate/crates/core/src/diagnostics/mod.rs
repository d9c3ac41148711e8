//! Evaluation and analysis: accuracy, confidence histograms, softmax
//! flatness, confidence-temperature sweeps and run reports.

mod eval;
mod metrics;
mod report;
mod sweep;

pub use eval::{evaluate, logits_for, predict};
pub use metrics::{accuracy, confidence_histogram, flatness_stats, kl_to_uniform, FlatnessStats, Histogram};
pub(crate) use metrics::kl_counts_to_uniform;
pub use report::{DataSummary, EpochMetrics, RunReport, StageSummary};
pub use sweep::{tconf_sweep, SweepRow};
