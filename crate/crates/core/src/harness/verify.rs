use std::path::Path;

use super::config::RunConfig;
use super::report::{param_shapes, read_log, read_summary, LogEvent, PruneStage, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::optim::SgdMomentum;
use crate::pruning::{count_flops, count_params, decay_ratio, propagate_prune, shape_audit, soft_zero_audit, weak_count};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub prune_events: usize,
    pub audits: usize,
    pub final_params: usize,
    pub final_flops: usize,
}

fn fail(msg: String) -> Error {
    Error::Audit(msg)
}

/// Rebuilds the model of a saved run, replays every logged prune plan on it,
/// and re-runs the shape and soft-zero audits at each logged checkpoint.
/// The replayed shapes must match the logged ones, and the summary's
/// complexity figures must be consistent with the replay.
pub fn verify_run_dir(dir: &Path) -> Result<VerifyReport> {
    let cfg = RunConfig::from_file(&dir.join("config.toml"))?;
    let log = read_log(&dir.join("run_log.jsonl"))?;
    let summary = read_summary(&dir.join("summary.json"))?;
    if summary.schema_version != SCHEMA_VERSION {
        return Err(fail(format!("unsupported schema version {}", summary.schema_version)));
    }
    let mut graph = cfg.build_model()?;
    let mut opt = SgdMomentum::new(cfg.optim.alpha, cfg.optim.beta)?;
    graph.register_params(&mut opt);
    let mut report = VerifyReport::default();

    for (line, ev) in log.iter().enumerate() {
        let at = |msg: String| fail(format!("run_log line {}: {msg}", line + 1));
        match ev {
            LogEvent::Init { shapes, .. } => {
                if *shapes != param_shapes(&graph, &opt) {
                    return Err(at("initial shapes differ from the configured model".into()));
                }
            }
            LogEvent::Prune {
                stage,
                epoch,
                p_t,
                members,
                original_n,
                n_wc,
                already_removed,
                clamped,
                hard,
                soft,
                ..
            } => {
                let gi = graph
                    .groups()
                    .iter()
                    .position(|g| g.members.iter().map(|&m| &graph.node(m).name).eq(members.iter()))
                    .ok_or_else(|| at(format!("no prune group {members:?}")))?;
                let lead = graph.conv(graph.groups()[gi].members[0]);
                if lead.original_n_out != *original_n || lead.original_n_out - lead.n_out() != *already_removed {
                    return Err(at(format!("bookkeeping of `{}` disagrees with the replay", lead.name)));
                }
                if *stage == PruneStage::Epoch {
                    let sched = cfg.schedule.ok_or_else(|| at("prune event without a schedule".into()))?;
                    let expect = decay_ratio(*epoch, sched.t_prune, sched.total_epochs)?;
                    match p_t {
                        Some(p) if (p - expect).abs() <= 1e-12 => {}
                        _ => return Err(at(format!("p_t {p_t:?} does not match the schedule ({expect})"))),
                    }
                    if !clamped && weak_count(*original_n, expect) != *n_wc {
                        return Err(at(format!("n_wc {n_wc} does not match the schedule")));
                    }
                    if !clamped && hard.len() + soft.len() != n_wc - already_removed {
                        return Err(at("partition size differs from the new weak count".into()));
                    }
                }
                propagate_prune(&mut graph, gi, &mut opt, hard, soft)?;
                report.prune_events += 1;
            }
            LogEvent::Audit {
                shapes,
                shape_audit: sa,
                soft_zero_audit: sz,
                ..
            } => {
                if !sa || !sz {
                    return Err(at("the run recorded a failed audit".into()));
                }
                shape_audit(&graph, &opt)?;
                soft_zero_audit(&graph, &opt)?;
                if *shapes != param_shapes(&graph, &opt) {
                    return Err(at("logged shapes differ from the replayed model".into()));
                }
                report.audits += 1;
            }
        }
    }

    report.final_params = count_params(&graph);
    report.final_flops = count_flops(&graph)?;
    if report.final_params != summary.final_params || report.final_flops != summary.final_flops {
        return Err(fail(format!(
            "summary claims {} params / {} FLOPs, replay gives {} / {}",
            summary.final_params, summary.final_flops, report.final_params, report.final_flops
        )));
    }
    if cfg.schedule.is_some_and(|s| s.r > 0.0) {
        for w in summary.epochs.windows(2) {
            if w[1].params > w[0].params || w[1].flops > w[0].flops {
                return Err(fail(format!("complexity grew between epochs {} and {}", w[0].epoch, w[1].epoch)));
            }
        }
    }
    Ok(report)
}
