use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_progprune");

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn progprune(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn count_reports_lenet5_size() {
    let o = progprune(&["count", configs().join("mnist_lenet5.toml").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "params\t61706\nflops\t416520\n");
}

#[test]
fn runs_are_bit_identical_and_verify() {
    let cfg = configs().join("synth_smoke.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = progprune(&["run", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["config.toml", "epochs.tsv", "summary.json", "run_log.jsonl"] {
        let a = fs::read(dirs[0].path().join(file)).unwrap();
        let b = fs::read(dirs[1].path().join(file)).unwrap();
        assert!(!a.is_empty() && a == b, "{file} differs between runs");
    }
    assert!(dirs[0].path().join("timing.tsv").exists());

    let o = progprune(&["verify", dirs[0].path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok: "));
}

#[test]
fn verify_rejects_a_tampered_log() {
    let cfg = configs().join("synth_smoke.toml");
    let d = tempfile::tempdir().unwrap();
    let o = progprune(&["run", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log_path = d.path().join("run_log.jsonl");
    let log = fs::read_to_string(&log_path).unwrap();
    let tampered = log.replacen("\"n_wc\":0,", "\"n_wc\":1,", 1);
    assert_ne!(log, tampered, "fixture changed shape");
    fs::write(&log_path, tampered).unwrap();
    let o = progprune(&["verify", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("error [audit]"));
}

#[test]
fn misspelled_key_is_named() {
    let d = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("synth_smoke.toml"))
        .unwrap()
        .replace("batch_size =", "batchsize =");
    let path = d.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let o = progprune(&["count", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batchsize"), "{}", stderr(&o));
}

#[test]
fn seeds_are_required() {
    let d = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("synth_smoke.toml")).unwrap();
    let cut = text.find("[seeds]").unwrap();
    let end = text[cut..].find("[output]").unwrap() + cut;
    let path = d.path().join("noseeds.toml");
    fs::write(&path, format!("{}{}", &text[..cut], &text[end..])).unwrap();
    let o = progprune(&["count", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seeds"), "{}", stderr(&o));
}

#[test]
fn missing_files_are_io_errors() {
    let o = progprune(&["count", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("error [io]"));
}
