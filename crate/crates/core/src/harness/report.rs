use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::optim::SgdMomentum;

/// Bumped whenever a report or log field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub name: String,
    pub live: usize,
    pub soft: usize,
    pub hard: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Training with pruning after every epoch.
    Prune,
    /// Training without a schedule.
    Train,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub phase: Phase,
    pub epoch: usize,
    /// Retained fraction targeted after this epoch (pruning epochs only).
    pub p_t: Option<f64>,
    pub lr: f64,
    pub layers: Vec<LayerCounts>,
    pub params: usize,
    pub flops: usize,
    pub train_loss: f64,
    pub train_error: f64,
    /// Test error (%) before this epoch's prune step.
    pub test_error_pre_prune: f64,
    /// Test error (%) at the end of the epoch.
    pub test_error: f64,
    pub warnings: Vec<String>,
    /// Seconds spent on the epoch. Kept out of the deterministic reports.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub params: usize,
    pub flops: usize,
    pub layers: Vec<LayerCounts>,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub name: String,
    pub config: RunConfig,
    pub initial: Complexity,
    pub epochs: Vec<EpochReport>,
    /// State after lingering soft-pruned filters were removed.
    pub finalized: Option<Complexity>,
    pub finetune: Vec<EpochReport>,
    pub final_params: usize,
    pub final_flops: usize,
    pub final_test_error: f64,
    /// Lowest end-of-epoch test error seen after the schedule completed.
    pub best_test_error: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShapes {
    pub name: String,
    pub value: Vec<usize>,
    pub grad: Vec<usize>,
    pub momentum: Option<Vec<usize>>,
}

pub fn param_shapes(graph: &ModelGraph, opt: &SgdMomentum) -> Vec<ParamShapes> {
    graph
        .params()
        .into_iter()
        .map(|(name, v, g)| ParamShapes {
            momentum: opt.momentum(&name).map(|m| m.shape().to_vec()),
            name,
            value: v.shape().to_vec(),
            grad: g.shape().to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStage {
    Epoch,
    Finalize,
}

/// One line of `run_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Init {
        schema_version: u32,
        model: String,
        shapes: Vec<ParamShapes>,
    },
    Prune {
        stage: PruneStage,
        epoch: usize,
        p_t: Option<f64>,
        members: Vec<String>,
        original_n: usize,
        n_wc: usize,
        already_removed: usize,
        clamped: bool,
        scores: Vec<f64>,
        hard: Vec<usize>,
        soft: Vec<usize>,
    },
    Audit {
        stage: PruneStage,
        epoch: usize,
        shapes: Vec<ParamShapes>,
        shape_audit: bool,
        soft_zero_audit: bool,
    },
}

fn fmt_layers(layers: &[LayerCounts]) -> String {
    layers
        .iter()
        .map(|l| format!("{}:{}/{}/{}", l.name, l.live, l.soft, l.hard))
        .collect::<Vec<_>>()
        .join(",")
}

/// Tab-separated, one row per epoch (schedule then fine-tuning).
pub fn epochs_tsv(summary: &RunSummary) -> String {
    let mut out = String::from(
        "phase\tepoch\tp_t\tlr\tparams\tflops\ttrain_loss\ttrain_error\ttest_error_pre_prune\ttest_error\tlayers(live/soft/hard)\twarnings\n",
    );
    for e in summary.epochs.iter().chain(&summary.finetune) {
        let phase = match e.phase {
            Phase::Prune => "prune",
            Phase::Train => "train",
            Phase::Finetune => "finetune",
        };
        let p_t = e.p_t.map_or("-".to_string(), |p| p.to_string());
        let _ = writeln!(
            out,
            "{phase}\t{}\t{p_t}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.epoch,
            e.lr,
            e.params,
            e.flops,
            e.train_loss,
            e.train_error,
            e.test_error_pre_prune,
            e.test_error,
            fmt_layers(&e.layers),
            e.warnings.join("; ")
        );
    }
    out
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `config.toml`, `epochs.tsv`, `summary.json`, `run_log.jsonl`, and
/// the non-deterministic `timing.tsv` into `dir`.
pub fn write_reports(dir: &Path, summary: &RunSummary, log: &[LogEvent]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("config.toml"), summary.config.to_toml_string().as_bytes())?;
    write(&dir.join("epochs.tsv"), epochs_tsv(summary).as_bytes())?;
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    write(&dir.join("summary.json"), &json)?;
    let mut lines = Vec::new();
    for ev in log {
        serde_json::to_writer(&mut lines, ev)?;
        lines.push(b'\n');
    }
    write(&dir.join("run_log.jsonl"), &lines)?;
    let mut timing = Vec::new();
    let _ = writeln!(timing, "phase\tepoch\twall_time_s");
    for e in summary.epochs.iter().chain(&summary.finetune) {
        let _ = writeln!(timing, "{:?}\t{}\t{:.3}", e.phase, e.epoch, e.wall_time_s);
    }
    write(&dir.join("timing.tsv"), &timing)
}

pub fn read_log(path: &Path) -> Result<Vec<LogEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
