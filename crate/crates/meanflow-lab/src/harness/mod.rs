//! Experiment orchestration: configuration, dataset generation, training,
//! sampling, evaluation, corpus analysis, and end-to-end recipes.
//!
//! Every command is deterministic given its config and seed; independent
//! stages draw from independent streams derived via `seed_chain` with the
//! stream tags below, so regenerating any one artifact never perturbs the
//! others.

pub mod analyze;
pub mod config;
pub mod data;
pub mod evalcmd;
pub mod recipes;
pub mod train;

pub use analyze::{analyze_corpus, AnalyzeMetric, AnalyzeOptions};
pub use config::{EmbeddingConfig, ExperimentConfig, TrainConfig, VSourceChoice};
pub use data::{gen_data, load_samples, sample_to_files, DataSet, Manifest, SamplesSummary};
pub use evalcmd::{eval_samples, EvalOptions};
pub use recipes::{available_recipes, run_recipe, RecipeOutcome};
pub use train::{prepare_training, run_training, MetricsLog, MetricsRow, TrainOutcome};

/// Seed-stream tags (see `numcore::seed_chain`).
pub mod streams {
    pub const DATA: u64 = 1;
    pub const HELDOUT: u64 = 2;
    pub const EMBED: u64 = 3;
    pub const INIT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const SAMPLE: u64 = 7;
}
