//! Training loop, hyperparameter grid, evaluation metrics and reports.

mod metrics;
mod study;
mod train;

pub use metrics::{
    competition_ranks, format_metric, mean, mse, nmse, percent_change, rank_metrics, sample_std, smooth_curve, spearman,
    NmseTable, RankSummary, SMOOTHING_ALPHA, SMOOTHING_SKIP,
};
pub use study::{
    correlation_csv, curve_csv, demand_representation_study, grid_search, rank_table_csv, representation_csv,
    subsample_count, summary_csv, topology_correlation, ConfigOutcome, CorrelationPair, CorrelationReport, GridResult,
    PercentChange, RepStudyPoint, RepStudyReport, RepStudySettings, TopologyRow,
};
pub use train::{grid, train, Preset, RunResult, TrainConfig};
