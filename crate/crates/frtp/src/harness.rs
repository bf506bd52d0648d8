//! End-to-end pipeline glue, experiment runner, and analysis computations.

pub mod analyze;
pub mod experiment;
pub mod pipeline;

pub use analyze::{analyze, correlation_matrix, pearson, AnalysisReport, CorrelationMatrix};
pub use experiment::{
    ablation_preset, run_ablation, run_grid, run_one, ExperimentConfig, ResultRow, ResultTable,
    SplitDays,
};
pub use pipeline::{load_data_dir, prepare, DataDir, FeatureSwitches, Prepared};
