use progprune::data::batch_iter;
use progprune::harness::{criterion_sweep, evaluate, run_with_data, train_epoch, Phase, RunConfig};
use progprune::models::lenet5;
use progprune::optim::SgdMomentum;
use progprune::pruning::{score_filters, Criterion, CriterionAccumulator, Mode, PruneSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMOKE: &str = include_str!("../../../configs/synth_smoke.toml");

fn smoke() -> RunConfig {
    let mut cfg = RunConfig::from_toml_str(SMOKE).unwrap();
    cfg.output = None;
    cfg
}

fn schedule(cfg: &mut RunConfig) -> &mut PruneSchedule {
    cfg.schedule.as_mut().unwrap()
}

#[test]
fn vanishing_target_keeps_every_filter() {
    let mut cfg = smoke();
    schedule(&mut cfg).t_prune = 1e-9;
    let (train, test) = cfg.load_data().unwrap();
    let out = run_with_data(&cfg, &train, &test, |_| {}).unwrap();
    assert_eq!(out.summary.final_params, out.summary.initial.params);
    assert_eq!(out.summary.final_flops, out.summary.initial.flops);
}

#[test]
fn params_and_flops_never_increase() {
    let mut cfg = smoke();
    schedule(&mut cfg).total_epochs = 6;
    let (train, test) = cfg.load_data().unwrap();
    let out = run_with_data(&cfg, &train, &test, |_| {}).unwrap();
    let mut last = (out.summary.initial.params, out.summary.initial.flops);
    for e in out.summary.epochs.iter().chain(&out.summary.finetune) {
        assert!(e.params <= last.0 && e.flops <= last.1, "epoch {}: {:?} after {last:?}", e.epoch, (e.params, e.flops));
        last = (e.params, e.flops);
    }
}

#[test]
fn final_live_fraction_matches_target() {
    for t_prune in [0.3, 0.5, 0.7] {
        let mut cfg = smoke();
        schedule(&mut cfg).t_prune = t_prune;
        cfg.train.finetune_epochs = 0;
        let (train, test) = cfg.load_data().unwrap();
        let out = run_with_data(&cfg, &train, &test, |_| {}).unwrap();
        let last = out.summary.epochs.last().unwrap();
        for l in &last.layers {
            let original = l.live + l.soft + l.hard;
            let expected = (original as f64 * (1.0 - t_prune)).ceil() as usize;
            assert!(l.live.abs_diff(expected) <= 1, "{}: {} live of {original} at t_prune {t_prune}", l.name, l.live);
        }
        let fin = out.summary.finalized.unwrap();
        assert!(fin.layers.iter().all(|l| l.soft == 0));
    }
}

#[test]
fn pure_soft_pruning_keeps_structure_until_finalize() {
    let mut cfg = smoke();
    schedule(&mut cfg).r = 0.0;
    let (train, test) = cfg.load_data().unwrap();
    let out = run_with_data(&cfg, &train, &test, |_| {}).unwrap();
    for e in &out.summary.epochs {
        assert_eq!((e.params, e.flops), (out.summary.initial.params, out.summary.initial.flops));
        assert!(e.layers.iter().all(|l| l.hard == 0));
    }
    assert!(out.summary.epochs.last().unwrap().layers.iter().any(|l| l.soft > 0));
}

#[test]
fn finetune_leaves_structure_alone() {
    let mut cfg = smoke();
    cfg.train.finetune_epochs = 2;
    let (train, test) = cfg.load_data().unwrap();
    let out = run_with_data(&cfg, &train, &test, |_| {}).unwrap();
    let fin = out.summary.finalized.as_ref().unwrap();
    assert_eq!(out.summary.finetune.len(), 2);
    for e in &out.summary.finetune {
        assert_eq!(e.phase, Phase::Finetune);
        assert_eq!((e.params, e.flops), (fin.params, fin.flops));
    }
    let best = out.summary.finetune.iter().map(|e| e.test_error).fold(fin.test_error, f64::min);
    assert_eq!(out.summary.best_test_error, best);
}

#[test]
fn memorized_data_has_zero_error() {
    let mut cfg = smoke();
    cfg.schedule = None;
    cfg.train.epochs = Some(25);
    cfg.train.finetune_epochs = 0;
    let (train, test) = cfg.load_data().unwrap();
    let small = train.take(64);
    let out = run_with_data(&cfg, &small, &test, |_| {}).unwrap();
    assert_eq!(evaluate(&out.graph, &small, 64).unwrap(), 0.0);
}

#[test]
fn untrained_model_is_at_chance() {
    let cfg = smoke();
    let (_, test) = cfg.load_data().unwrap();
    let errors: Vec<f64> = (0..8)
        .map(|seed| evaluate(&lenet5(10, &mut ChaCha8Rng::seed_from_u64(seed)), &test, 256).unwrap())
        .collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    assert!((mean - 90.0).abs() <= 5.0, "{errors:?}");
}

#[test]
fn rpgp_epochs_are_faster_than_pgp() {
    let mut cfg = smoke();
    cfg.train.finetune_epochs = 0;
    let (train, test) = cfg.load_data().unwrap();
    let pgp = run_with_data(&cfg, &train, &test, |_| {}).unwrap();
    let s = schedule(&mut cfg);
    s.mode = Mode::Rpgp;
    s.criterion = Criterion::GnS;
    let rpgp = run_with_data(&cfg, &train, &test, |_| {}).unwrap();
    let time = |o: &progprune::harness::RunOutcome| o.summary.epochs.iter().map(|e| e.wall_time_s).sum::<f64>();
    assert!(time(&rpgp) < time(&pgp), "rpgp {} s vs pgp {} s", time(&rpgp), time(&pgp));
}

/// On a single batch, RPGP scores the gradient before the update and PGP the
/// one after it, so the two agree up to a term proportional to the step.
#[test]
fn rpgp_and_pgp_scores_differ_only_by_the_update() {
    let cfg = smoke();
    let (train, _) = cfg.load_data().unwrap();
    let batches = batch_iter(32, 32, None, true).unwrap();
    let gap = |alpha: f64| {
        let base = lenet5(10, &mut ChaCha8Rng::seed_from_u64(4));
        let run = |rpgp: bool| {
            let mut g = base.clone();
            let mut opt = SgdMomentum::new(alpha, 0.0).unwrap();
            g.register_params(&mut opt);
            let mut acc = CriterionAccumulator::new(&g);
            train_epoch(&mut g, &mut opt, &train, &batches, rpgp.then_some(&mut acc), None).unwrap();
            if !rpgp {
                criterion_sweep(&mut g, &train, &batches, &mut acc).unwrap();
            }
            let id = g.find("conv2").unwrap();
            score_filters(g.conv(id), acc.layer(id), Criterion::GnG).unwrap()
        };
        let (a, b) = (run(true), run(false));
        a.iter().zip(&b).map(|(x, y)| (x - y).abs() / x.abs().max(1e-300)).fold(0.0, f64::max)
    };
    let (small, tiny) = (gap(1e-4), gap(1e-7));
    assert!(tiny < 1e-5, "relative gap {tiny} at alpha 1e-7");
    assert!(tiny < small, "gap does not shrink with the step: {tiny} vs {small}");
}
