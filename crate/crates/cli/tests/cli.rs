use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use surrocal_core::pipeline::ExperimentConfig;

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy-smoke.toml")
}

fn surrocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surrocal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn run_smoke(out: &Path, seed: &str) -> Output {
    surrocal(&[
        "run",
        "--config",
        smoke_config().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        seed,
    ])
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_smoke(dir.path(), "7");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in [
        "manifest.json",
        "report.json",
        "metrics.csv",
        "samples_phase1.csv",
        "samples_phase3.csv",
        "triangle.csv",
        "model.json",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let m = manifest(dir.path());
    assert_eq!(m["status"], "ok");
    assert!(m["finished_at"].is_string());
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("fold,train_rmse,train_pearson,test_rmse,test_pearson\n"));
    assert_eq!(metrics.lines().count(), 1 + 3);
}

#[test]
fn manifest_config_reparses_identically() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_smoke(dir.path(), "3").status.success());
    let text = manifest(dir.path())["config"].as_str().unwrap().to_string();
    let echoed = ExperimentConfig::from_toml(&text).unwrap();
    let original = std::fs::read_to_string(smoke_config()).unwrap();
    let mut expected = ExperimentConfig::from_toml(&original).unwrap();
    expected.seed = 3;
    assert_eq!(echoed, expected.resolved().unwrap());
    assert_eq!(echoed.resolved().unwrap(), echoed);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_smoke(a.path(), "7").status.success());
    assert!(run_smoke(b.path(), "7").status.success());
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn malformed_config_leaves_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "n_train = \"many\"\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = surrocal(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let entries: Vec<_> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("manifest.json")]);
    let m = manifest(&out_dir);
    assert_eq!(m["status"], "failed");
    assert_eq!(m["error"]["kind"], "config");
    assert!(m["error"]["message"].as_str().unwrap().contains("n_train"));
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = surrocal(&[
        "sweep",
        "--config",
        smoke_config().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--etas",
        "1,2",
        "--schemes",
        "lhc,mixed",
        "--jobs",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
    assert!(text.starts_with("scheme,eta,"));
}

#[test]
fn curve_emits_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = surrocal(&[
        "curve",
        "--config",
        smoke_config().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--sizes",
        "20,40",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("learning_curve.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2);
}

#[test]
fn empty_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = surrocal(&[
        "sweep",
        "--out",
        dir.path().to_str().unwrap(),
        "--etas",
        "",
        "--schemes",
        "lhc",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = surrocal(&[
        "sweep",
        "--out",
        dir.path().to_str().unwrap(),
        "--schemes",
        "lhc",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = surrocal(&["curve", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bundled_configs_resolve() {
    for name in ["toy.toml", "toy-smoke.toml", "standin.toml"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("configs")
            .join(name);
        let cfg = ExperimentConfig::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap();
        cfg.resolved().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn validate_passes_and_reports_the_evidence_gap() {
    let out = surrocal(&["validate"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 6);
    assert!(stdout.contains("abs_lnz_error="));
}

#[test]
fn validate_fails_on_corrupted_gradient() {
    let out = surrocal(&["validate", "--corrupt-gradient"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL gradient"));
}
