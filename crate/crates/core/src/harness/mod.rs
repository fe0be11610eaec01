//! Experiment driver: source pretraining, the query-and-adapt rounds, the
//! simulated oracle, evaluation, JSON configs and CSV artifacts.

mod config;
mod experiment;
mod output;
mod pool;

pub use config::{benchmark_domain, Budget, DatasetConfig, ExperimentConfig, ModelConfig, PretrainConfig};
pub use experiment::{
    evaluate, predict, prepare, pretrain_source, probe_round, run_experiment, run_prepared, split_target, Evaluation,
    ExperimentOutcome, Prepared, Pretrained, RoundMetrics, SelectionRecord,
};
pub use output::{export_embeddings, write_losses_csv, write_metrics_csv, write_selections_csv};
pub use pool::{budget_schedule, Oracle, TargetPool};
