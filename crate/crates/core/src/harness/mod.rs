//! Experiment orchestration: the per-epoch train / score / prune loop,
//! evaluation, fine-tuning, report files, and replay verification.

mod config;
mod report;
mod runner;
mod verify;

pub use config::{DataConfig, ModelConfig, OptimConfig, OutputConfig, RunConfig, Seeds, TrainConfig};
pub use report::{
    epochs_tsv, param_shapes, read_log, read_summary, write_reports, Complexity, EpochReport, LayerCounts, LogEvent,
    ParamShapes, Phase, PruneStage, RunSummary, SCHEMA_VERSION,
};
pub use runner::{
    criterion_sweep, evaluate, finalize, finetune, layer_counts, prune_step, run, run_pgp, run_rpgp, run_with_data,
    train_epoch, RunOutcome,
};
pub use verify::{verify_run_dir, VerifyReport};
