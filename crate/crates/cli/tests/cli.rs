use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gaclab(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gaclab"));
    cmd.args(args).env_remove("GACLAB_OUT");
    if let Some(p) = out_env {
        cmd.env("GACLAB_OUT", p);
    }
    cmd.output().expect("binary runs")
}

const FAST: [&str; 8] = [
    "--hidden",
    "8",
    "--batch-size",
    "8",
    "--set",
    "steps_per_epoch=40",
    "--set",
    "warmup_steps=10",
];

fn only_run_dir(root: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

#[test]
fn missing_env_is_a_usage_error() {
    let out = gaclab(&["train", "--epochs", "1"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("environment is required"));
}

#[test]
fn train_writes_run_directory() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--env", "bandit2d", "--epochs", "1", "--seed", "0"];
    args.extend(FAST);
    let out = gaclab(&args, Some(root.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = only_run_dir(root.path());
    assert!(run.join("manifest.cfg").is_file());
    assert!(run.join("checkpoint/policy.bin").is_file());
    assert!(run.join("checkpoint/critic.bin").is_file());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let eval = gaclab(
        &["evaluate", "--checkpoint", run.to_str().unwrap(), "--episodes", "2"],
        None,
    );
    assert!(eval.status.success());
    assert!(String::from_utf8_lossy(&eval.stdout).contains("mean return"));

    let grid = root.path().join("grid.csv");
    let q = gaclab(
        &[
            "qsurface",
            "--checkpoint",
            run.to_str().unwrap(),
            "--resolution",
            "12",
            "--out",
            grid.to_str().unwrap(),
        ],
        None,
    );
    assert!(q.status.success(), "{}", String::from_utf8_lossy(&q.stderr));
    assert_eq!(fs::read_to_string(grid).unwrap().lines().count(), 1 + 144);
}

#[test]
fn config_file_values_reach_manifest() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("run.cfg");
    fs::write(&cfg, "env = bandit2d\nsample_range = 7\nsample_count = 5\n").unwrap();
    let out_dir = root.path().join("out");
    let mut args = vec![
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend(FAST);
    let out = gaclab(&args, None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(only_run_dir(&out_dir).join("manifest.cfg")).unwrap();
    assert!(manifest.lines().any(|l| l == "sample_range = 7.0"));
    assert!(manifest.lines().any(|l| l == "sample_count = 5"));
}

#[test]
fn bad_config_fails_with_message() {
    let root = tempfile::tempdir().unwrap();
    let out = gaclab(&["train", "--env", "bandit2d", "--set", "tau=3"], Some(root.path()));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));
    let out = gaclab(&["train", "--env", "cartpole"], Some(root.path()));
    assert!(!out.status.success());
}

#[test]
fn qsurface_requires_two_action_dims() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--env", "pendulum", "--epochs", "0"];
    args.extend(FAST);
    assert!(gaclab(&args, Some(root.path())).status.success());
    let run = only_run_dir(root.path());
    let out = gaclab(&["qsurface", "--checkpoint", run.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_needs_values_and_writes_aggregate() {
    let root = tempfile::tempdir().unwrap();
    let out = gaclab(
        &["sweep", "--env", "bandit2d", "--axis", "sample_range"],
        Some(root.path()),
    );
    assert_eq!(out.status.code(), Some(2));

    let mut args = vec![
        "sweep",
        "--env",
        "bandit2d",
        "--epochs",
        "1",
        "--axis",
        "sample_count",
        "--values",
        "1,4",
        "--seeds",
        "0,1",
    ];
    args.extend(FAST);
    let out = gaclab(&args, Some(root.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg = fs::read_to_string(root.path().join("sweep-sample_count/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
}

#[test]
fn tables_and_battery() {
    let root = tempfile::tempdir().unwrap();
    let csv = root.path().join("bounds.csv");
    let out = gaclab(
        &[
            "bound-table",
            "--n",
            "10,1000000",
            "--beta",
            "0.01,100",
            "--out",
            csv.to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(!text.contains("NaN") && !text.contains("inf"));

    let out = gaclab(&["tabular", "--mdps", "3", "--iterations", "500"], Some(root.path()));
    assert!(out.status.success());
    assert!(root.path().join("tabular/summary.csv").is_file());
    assert!(String::from_utf8_lossy(&out.stdout).contains("3/3"));
}
