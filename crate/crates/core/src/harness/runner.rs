use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::report::{
    param_shapes, Complexity, EpochReport, LayerCounts, LogEvent, Phase, PruneStage, RunSummary, SCHEMA_VERSION,
};
use crate::data::{augment_flip_crop, batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::models::{ModelGraph, Successor};
use crate::nn::softmax_cross_entropy;
use crate::optim::{keep_list, SgdMomentum};
use crate::pruning::{
    count_flops, count_params, filter_counts, propagate_prune, score_filters, select_partition, shape_audit,
    soft_zero_audit, weak_count, Criterion, CriterionAccumulator, Mode, PruneSchedule,
};

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub log: Vec<LogEvent>,
    pub graph: ModelGraph,
    pub opt: SgdMomentum,
}

pub fn layer_counts(graph: &ModelGraph) -> Vec<LayerCounts> {
    filter_counts(graph)
        .into_iter()
        .map(|(name, live, soft, hard)| LayerCounts { name, live, soft, hard })
        .collect()
}

/// Test error in percent, batch norms in eval mode.
pub fn evaluate(graph: &ModelGraph, ds: &Dataset, batch_size: usize) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    for idx in batch_iter(ds.len(), batch_size, None, false)? {
        let (x, y) = ds.batch(&idx)?;
        let logits = graph.forward_eval(&x)?;
        for (b, &label) in y.iter().enumerate() {
            let row = logits.row(b);
            let pred = (0..row.len())
                .max_by(|&i, &j| row[i].total_cmp(&row[j]).then(j.cmp(&i)))
                .expect("at least one class");
            wrong += usize::from(pred != label);
        }
    }
    Ok(100.0 * wrong as f64 / ds.len() as f64)
}

/// Mean loss and error (%) of one pass of SGD over `batches`. When `acc` is
/// given, each iteration's gradients are folded into it before the update.
pub fn train_epoch(
    graph: &mut ModelGraph,
    opt: &mut SgdMomentum,
    ds: &Dataset,
    batches: &[Vec<usize>],
    mut acc: Option<&mut CriterionAccumulator>,
    mut augment: Option<&mut ChaCha8Rng>,
) -> Result<(f64, f64)> {
    let (mut loss_sum, mut wrong, mut seen) = (0.0, 0usize, 0usize);
    for idx in batches {
        let (mut x, y) = ds.batch(idx)?;
        if let Some(rng) = augment.as_deref_mut() {
            augment_flip_crop(&mut x, 4, rng);
        }
        graph.zero_grads();
        let logits = graph.forward_train(&x, true)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
        if !loss.is_finite() {
            return Err(Error::Audit(format!("training loss became {loss}")));
        }
        graph.backward(&grad)?;
        if let Some(acc) = acc.as_deref_mut() {
            acc.observe(graph)?;
        }
        graph.sgd_step(opt)?;
        loss_sum += loss * y.len() as f64;
        for (b, &label) in y.iter().enumerate() {
            let row = logits.row(b);
            let pred = (0..row.len())
                .max_by(|&i, &j| row[i].total_cmp(&row[j]).then(j.cmp(&i)))
                .expect("at least one class");
            wrong += usize::from(pred != label);
        }
        seen += y.len();
    }
    graph.clear_cache();
    let seen = seen.max(1) as f64;
    Ok((loss_sum / seen, 100.0 * wrong as f64 / seen))
}

/// Forward/backward over `batches` without touching parameters or batch
/// norm statistics, accumulating the criterion.
pub fn criterion_sweep(graph: &mut ModelGraph, ds: &Dataset, batches: &[Vec<usize>], acc: &mut CriterionAccumulator) -> Result<()> {
    for idx in batches {
        let (x, y) = ds.batch(idx)?;
        graph.zero_grads();
        let logits = graph.forward_train(&x, false)?;
        let (_, grad) = softmax_cross_entropy(&logits, &y)?;
        graph.backward(&grad)?;
        acc.observe(graph)?;
    }
    graph.zero_grads();
    graph.clear_cache();
    Ok(())
}

/// Scores, partitions, and prunes every prunable group for epoch `t`.
/// Returns the log events and any warnings.
pub fn prune_step(
    graph: &mut ModelGraph,
    opt: &mut SgdMomentum,
    schedule: &PruneSchedule,
    mut acc: Option<&mut CriterionAccumulator>,
    t: usize,
) -> Result<(Vec<LogEvent>, Vec<String>)> {
    let p_t = schedule.ratio(t)?;
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    for gi in 0..graph.groups().len() {
        let group = graph.groups()[gi].clone();
        if !group.prunable {
            continue;
        }
        let lead = graph.conv(group.members[0]);
        let (original_n, current_n) = (lead.original_n_out, lead.n_out());
        let name = lead.name.clone();
        let already = original_n - current_n;
        let n_wc = weak_count(original_n, p_t);
        let mut k_new = n_wc.saturating_sub(already);
        let mut clamped = false;
        if k_new > current_n - 1 {
            warnings.push(format!(
                "{name}: schedule asks for {k_new} weak filters of {current_n}; clamped to keep one live"
            ));
            k_new = current_n - 1;
            clamped = true;
        }
        if k_new == 0 {
            warnings.push(format!("{name}: no new weak filters"));
        }
        let mut scores = vec![0.0; current_n];
        for &m in &group.members {
            let s = score_filters(graph.conv(m), acc.as_deref().and_then(|a| a.layer(m)), schedule.criterion)?;
            for (acc_s, v) in scores.iter_mut().zip(s) {
                *acc_s += v;
            }
        }
        let part = select_partition(&scores, already + k_new, already, schedule.r)?;
        propagate_prune(graph, gi, opt, &part.hard, &part.soft)?;
        if let (Some(acc), false) = (acc.as_deref_mut(), part.hard.is_empty()) {
            let keep = keep_list(current_n, &part.hard);
            for s in &group.successors {
                if let Successor::Conv(id) = *s {
                    acc.retain_input_channels(id, &keep)?;
                }
            }
        }
        events.push(LogEvent::Prune {
            stage: PruneStage::Epoch,
            epoch: t,
            p_t: Some(p_t),
            members: group.members.iter().map(|&m| graph.node(m).name.clone()).collect(),
            original_n,
            n_wc,
            already_removed: already,
            clamped,
            scores,
            hard: part.hard,
            soft: part.soft,
        });
    }
    Ok((events, warnings))
}

/// Hard-removes every filter still soft-pruned (used once the schedule ends).
pub fn finalize(graph: &mut ModelGraph, opt: &mut SgdMomentum, epoch: usize) -> Result<Vec<LogEvent>> {
    let mut events = Vec::new();
    for gi in 0..graph.groups().len() {
        let group = graph.groups()[gi].clone();
        if !group.prunable {
            continue;
        }
        let lead = graph.conv(group.members[0]);
        let hard = lead.soft_rows();
        let (original_n, already) = (lead.original_n_out, lead.original_n_out - lead.n_out());
        propagate_prune(graph, gi, opt, &hard, &[])?;
        events.push(LogEvent::Prune {
            stage: PruneStage::Finalize,
            epoch,
            p_t: None,
            members: group.members.iter().map(|&m| graph.node(m).name.clone()).collect(),
            original_n,
            n_wc: already + hard.len(),
            already_removed: already,
            clamped: false,
            scores: vec![],
            hard,
            soft: vec![],
        });
    }
    Ok(events)
}

fn audit_event(graph: &ModelGraph, opt: &SgdMomentum, stage: PruneStage, epoch: usize) -> Result<LogEvent> {
    shape_audit(graph, opt)?;
    soft_zero_audit(graph, opt)?;
    Ok(LogEvent::Audit {
        stage,
        epoch,
        shapes: param_shapes(graph, opt),
        shape_audit: true,
        soft_zero_audit: true,
    })
}

fn complexity(graph: &ModelGraph, test: &Dataset, cfg: &RunConfig) -> Result<Complexity> {
    Ok(Complexity {
        params: count_params(graph),
        flops: count_flops(graph)?,
        layers: layer_counts(graph),
        test_error: evaluate(graph, test, cfg.train.eval_batch_size)?,
    })
}

fn augment_rng(cfg: &RunConfig, stream: u64) -> Option<ChaCha8Rng> {
    cfg.augment().then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.shuffle ^ 0xa5a5_a5a5_a5a5_a5a5);
        rng.set_stream(stream);
        rng
    })
}

/// Runs the configured experiment on pre-loaded data. `on_epoch` sees each
/// report as soon as it is complete.
pub fn run_with_data(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut graph = cfg.build_model()?;
    if train.image_shape() != cfg.input_shape() {
        return Err(Error::Config(format!(
            "data images are {:?}, model expects {:?}",
            train.image_shape(),
            cfg.input_shape()
        )));
    }
    let mut opt = SgdMomentum::new(cfg.optim.alpha, cfg.optim.beta)?.with_weight_decay(cfg.optim.weight_decay);
    graph.register_params(&mut opt);
    let mut log = vec![LogEvent::Init {
        schema_version: SCHEMA_VERSION,
        model: graph.name.clone(),
        shapes: param_shapes(&graph, &opt),
    }];
    let initial = complexity(&graph, test, cfg)?;
    let mut warnings = Vec::new();
    let mut epochs = Vec::new();
    let schedule = cfg.schedule;
    let criterion = schedule.map(|s| s.criterion);
    let needs_acc = criterion.is_some_and(Criterion::needs_accumulator);

    for t in 1..=cfg.epochs() {
        let start = Instant::now();
        let lr = cfg.lr_at(t);
        opt.alpha = lr;
        let batches = batch_iter(train.len(), cfg.train.batch_size, Some((cfg.seeds.shuffle, t as u64)), true)?;
        let mut acc = needs_acc.then(|| CriterionAccumulator::new(&graph));
        graph.track_feature_saliency = criterion == Some(Criterion::Taylor);
        let rpgp = schedule.is_some_and(|s| s.mode == Mode::Rpgp);
        let mut aug = augment_rng(cfg, t as u64);
        let (train_loss, train_error) = train_epoch(
            &mut graph,
            &mut opt,
            train,
            &batches,
            if rpgp { acc.as_mut() } else { None },
            aug.as_mut(),
        )?;
        if let (Some(acc), false) = (acc.as_mut(), rpgp) {
            criterion_sweep(&mut graph, train, &batches, acc)?;
        }
        graph.track_feature_saliency = false;
        graph.zero_grads();
        let pre = evaluate(&graph, test, cfg.train.eval_batch_size)?;
        let mut epoch_warnings = Vec::new();
        let (phase, p_t) = match &schedule {
            Some(s) => {
                let (events, w) = prune_step(&mut graph, &mut opt, s, acc.as_mut(), t)?;
                log.extend(events);
                log.push(audit_event(&graph, &opt, PruneStage::Epoch, t)?);
                epoch_warnings = w;
                (Phase::Prune, Some(s.ratio(t)?))
            }
            None => {
                shape_audit(&graph, &opt)?;
                (Phase::Train, None)
            }
        };
        let post = if schedule.is_some() {
            evaluate(&graph, test, cfg.train.eval_batch_size)?
        } else {
            pre
        };
        warnings.extend(epoch_warnings.iter().map(|w| format!("epoch {t}: {w}")));
        let report = EpochReport {
            phase,
            epoch: t,
            p_t,
            lr,
            layers: layer_counts(&graph),
            params: count_params(&graph),
            flops: count_flops(&graph)?,
            train_loss,
            train_error,
            test_error_pre_prune: pre,
            test_error: post,
            warnings: epoch_warnings,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        epochs.push(report);
    }

    let finalized = if schedule.is_some() && cfg.train.finalize {
        let t = cfg.epochs();
        log.extend(finalize(&mut graph, &mut opt, t)?);
        log.push(audit_event(&graph, &opt, PruneStage::Finalize, t)?);
        Some(complexity(&graph, test, cfg)?)
    } else {
        None
    };

    let last_error = finalized
        .as_ref()
        .map(|c| c.test_error)
        .or(epochs.last().map(|e| e.test_error))
        .unwrap_or(initial.test_error);
    let ft = finetune(&mut graph, &mut opt, cfg, train, test, &mut on_epoch)?;
    let final_test_error = ft.last().map_or(last_error, |e| e.test_error);
    let best_test_error = ft.iter().map(|e| e.test_error).fold(last_error, f64::min);

    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        config: cfg.clone(),
        initial,
        epochs,
        finalized,
        finetune: ft,
        final_params: count_params(&graph),
        final_flops: count_flops(&graph)?,
        final_test_error,
        best_test_error,
        warnings,
    };
    Ok(RunOutcome {
        summary,
        log,
        graph,
        opt,
    })
}

/// Plain training of an already pruned model; structure never changes.
pub fn finetune(
    graph: &mut ModelGraph,
    opt: &mut SgdMomentum,
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    let mut out = Vec::new();
    let base = cfg.epochs();
    opt.alpha = cfg.optim.finetune_alpha.unwrap_or(cfg.optim.alpha);
    for e in 1..=cfg.train.finetune_epochs {
        let start = Instant::now();
        let stream = (base + e) as u64;
        let batches = batch_iter(train.len(), cfg.train.batch_size, Some((cfg.seeds.shuffle, stream)), true)?;
        let mut aug = augment_rng(cfg, stream);
        let (train_loss, train_error) = train_epoch(graph, opt, train, &batches, None, aug.as_mut())?;
        graph.zero_grads();
        shape_audit(graph, opt)?;
        let err = evaluate(graph, test, cfg.train.eval_batch_size)?;
        let report = EpochReport {
            phase: Phase::Finetune,
            epoch: e,
            p_t: None,
            lr: opt.alpha,
            layers: layer_counts(graph),
            params: count_params(graph),
            flops: count_flops(graph)?,
            train_loss,
            train_error,
            test_error_pre_prune: err,
            test_error: err,
            warnings: vec![],
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        out.push(report);
    }
    Ok(out)
}

/// Loads the configured data and runs the experiment.
pub fn run(cfg: &RunConfig, on_epoch: impl FnMut(&EpochReport)) -> Result<RunOutcome> {
    let (train, test) = cfg.load_data()?;
    run_with_data(cfg, &train, &test, on_epoch)
}

fn run_mode(cfg: &RunConfig, mode: Mode) -> Result<Vec<EpochReport>> {
    match cfg.schedule {
        Some(s) if s.mode == mode => Ok(run(cfg, |_| {})?.summary.epochs),
        _ => Err(Error::Config(format!("config does not describe a {mode:?} schedule"))),
    }
}

/// Prune with an extra criterion sweep after every training epoch.
pub fn run_pgp(cfg: &RunConfig) -> Result<Vec<EpochReport>> {
    run_mode(cfg, Mode::Pgp)
}

/// Prune with the criterion gathered during the training epoch itself.
pub fn run_rpgp(cfg: &RunConfig) -> Result<Vec<EpochReport>> {
    run_mode(cfg, Mode::Rpgp)
}
