//! The `unilat` binary: exit codes, run directories and determinism.

use std::path::Path;
use std::process::{Command, Output};

use unilat::config::RunConfig;
use unilat::rundir::RunDir;

fn unilat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unilat")).args(args).env("RUST_BACKTRACE", "0").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = unilat(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let mut cfg = RunConfig::smoke();
    cfg.data.size = 96;
    cfg.train.steps = 6;
    cfg.train.batch_size = 4;
    cfg.train.checkpoint_every = 3;
    cfg.eval.images = 8;
    cfg.eval.n_mc = 64;
    cfg.eval.bootstrap = 4;
    cfg.eval.samples = 3;
    cfg.eval.classifier_steps = 5;
    cfg.sampler.steps = 3;
    let p = dir.join("tiny.txt");
    cfg.save(&p).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn missing_config_fails_with_the_path() {
    let out = unilat(&["train-ae", "--config", "/no/such/config.txt", "--run-dir", "/tmp/unused-run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/config.txt"));
}

#[test]
fn bad_config_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    std::fs::write(&p, "train.steps = 2\ntrain.batch = 3\n").unwrap();
    let out = unilat(&["train-ae", "--config", p.to_str().unwrap(), "--run-dir", dir.path().join("r").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.txt:2:"));
}

#[test]
fn stage_one_pipeline_is_deterministic_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    let first = ok(&["train-ae", "--config", &cfg, "--run-dir", a, "--seed", "3"]);
    let second = ok(&["train-ae", "--config", &cfg, "--run-dir", b, "--seed", "3"]);
    assert_eq!(first, second);
    assert!(first.contains("bits/pixel"));
    let log = |d: &str| std::fs::read_to_string(Path::new(d).join("log.jsonl")).unwrap();
    assert_eq!(log(a), log(b));
    assert_eq!(log(a).lines().count(), 6);

    let run = RunDir::open(Path::new(a)).unwrap();
    for step in [0, 3, 6] {
        assert!(run.checkpoint_path(step).is_file(), "checkpoint {step}");
    }
    assert_eq!(run.config().unwrap().train.seed, 3);

    // finished runs are left alone without --overwrite
    assert!(ok(&["train-ae", "--config", &cfg, "--run-dir", a]).contains("--overwrite"));
    assert_eq!(log(a), log(b));

    let ea = ok(&["eval", "--run-dir", a]);
    ok(&["eval", "--run-dir", b]);
    let metrics = |d: &str| std::fs::read_to_string(Path::new(d).join("metrics.csv")).unwrap();
    assert_eq!(metrics(a), metrics(b));
    let m = metrics(a);
    assert!(m.starts_with("metric,value,std_error,n,seed,checkpoint"));
    for name in ["psnr", "rfid", "bits_per_pixel", "bits_per_dim"] {
        assert!(m.lines().any(|l| l.starts_with(&format!("{name},"))), "{name} missing in {m}");
        assert!(ea.contains(name));
    }
    assert!(m.contains("step-00000006"));
    assert!(ok(&["eval", "--run-dir", a]).contains("exists"));

    ok(&["sample", "--run-dir", a, "--n", "2"]);
    let gen = Path::new(a).join("samples/generated");
    assert!(gen.join("sample-00001.png").is_file());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(gen.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["latent_model"], "prior");
    assert_eq!(manifest["checkpoint"], "step-00000006");

    ok(&["reconstruct", "--run-dir", a, "--n", "2"]);
    assert!(Path::new(a).join("samples/reconstructions/reconstruction-00001.png").is_file());
}

#[test]
fn stage_two_checks_the_latent_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ae = dir.path().join("ae");
    let ae = ae.to_str().unwrap();
    ok(&["train-ae", "--config", &cfg, "--run-dir", ae]);

    let bad = dir.path().join("bad.txt");
    let mut c = RunConfig::load(Path::new(&cfg)).unwrap();
    c.train.base_lambda_max = Some(6.0);
    c.save(&bad).unwrap();
    let base_dir = dir.path().join("base");
    let out = unilat(&["train-base", "--ae-run-dir", ae, "--config", bad.to_str().unwrap(), "--run-dir", base_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_z0"));
    assert!(!base_dir.exists(), "rejected before anything is written");

    let out = unilat(&["train-base", "--ae-run-dir", dir.path().join("nope").to_str().unwrap(), "--run-dir", base_dir.to_str().unwrap()]);
    assert!(!out.status.success());

    ok(&["train-base", "--ae-run-dir", ae, "--run-dir", base_dir.to_str().unwrap(), "--steps", "4"]);
    let run = RunDir::open(&base_dir).unwrap();
    let file = run.run_file().unwrap();
    let (before, after) = file.record.frozen_checksums.unwrap();
    assert_eq!(before, after);
    ok(&["sample", "--run-dir", base_dir.to_str().unwrap(), "--n", "1"]);
    let manifest = std::fs::read_to_string(base_dir.join("samples/generated/manifest.json")).unwrap();
    assert!(manifest.contains("\"base\""));
}

#[test]
fn flops_prints_inference_and_training_counts() {
    let text = ok(&["flops"]);
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let (inf, train): (u64, u64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        assert_eq!(train, 3 * inf);
        rows += 1;
    }
    assert_eq!(rows, 4);
}

#[test]
fn init_config_and_export_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    ok(&["init-config", "--out", cfg.to_str().unwrap(), "--smoke"]);
    assert_eq!(RunConfig::load(&cfg).unwrap(), RunConfig::smoke());
    assert!(ok(&["init-config", "--out", cfg.to_str().unwrap()]).contains("exists"));
    let out = dir.path().join("png");
    ok(&["export-dataset", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--count", "3"]);
    assert!(out.join("image-00002.png").is_file());
    assert!(!out.join("image-00003.png").exists());
}

#[test]
fn sweep_writes_a_sorted_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut c = RunConfig::load(Path::new(&cfg)).unwrap();
    c.sweep.values = vec![2.0, 1.0];
    c.train.steps = 2;
    c.save(Path::new(&cfg)).unwrap();
    let run = dir.path().join("sweep");
    ok(&["sweep", "--config", &cfg, "--run-dir", run.to_str().unwrap()]);
    let table = std::fs::read_to_string(run.join("sweep.csv")).unwrap();
    let values: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["1.0", "2.0"]);
}
