use progprune::data::{batch_iter, synth_dataset};
use progprune::harness::{evaluate, run_with_data, RunConfig};

const SMOKE: &str = include_str!("../../../configs/synth_smoke.toml");

fn unpruned(epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::from_toml_str(SMOKE).unwrap();
    cfg.schedule = None;
    cfg.train.epochs = Some(epochs);
    cfg.train.finetune_epochs = 0;
    cfg.output = None;
    cfg
}

#[test]
fn synth_trains_below_five_percent_in_three_epochs() {
    let cfg = unpruned(3);
    let (train, test) = cfg.load_data().unwrap();
    assert_eq!(train.len(), 512);
    let out = run_with_data(&cfg, &train, &test, |_| {}).unwrap();
    let err = evaluate(&out.graph, &train, 256).unwrap();
    println!("synth train error after 3 epochs: {err:.2}%");
    assert!(err < 5.0, "train error {err}%");
}

#[test]
fn batch_stream_is_reproducible() {
    let a = batch_iter(1000, 32, Some((5, 3)), true).unwrap();
    assert_eq!(a, batch_iter(1000, 32, Some((5, 3)), true).unwrap());
    assert_eq!(a.len(), 31);
    assert!(a.iter().all(|b| b.len() == 32));
    let ds = synth_dataset(1, 40, 10, [1, 28, 28]).unwrap();
    let (x1, y1) = ds.batch(&a[0][..8].iter().map(|i| i % 40).collect::<Vec<_>>()).unwrap();
    let (x2, y2) = ds.batch(&a[0][..8].iter().map(|i| i % 40).collect::<Vec<_>>()).unwrap();
    assert_eq!(x1, x2);
    assert_eq!(y1, y2);
}

#[test]
fn synth_training_is_robust_to_init_seed() {
    for s in 1..6 {
        let mut cfg = unpruned(3);
        cfg.seeds.init = s;
        cfg.seeds.shuffle = s + 100;
        let (train, test) = cfg.load_data().unwrap();
        let out = run_with_data(&cfg, &train, &test, |_| {}).unwrap();
        let err = evaluate(&out.graph, &train, 256).unwrap();
        assert!(err < 5.0, "init seed {s}: train error {err}%");
    }
}
