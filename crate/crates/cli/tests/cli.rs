//! End-to-end checks of the `iqn` binary: exit codes, config error
//! reporting, artifact layout, checkpoint evaluation and plotting.

use std::path::Path;
use std::process::{Command, Output};

fn iqn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iqn"))
}

fn run(args: &[&str]) -> Output {
    iqn().args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(
        &path,
        format!(
            "
env = bandit:risky
steps = 400
seed = 5
out_dir = {}
kappa = 0
n_online = 4
n_target = 4
k_policy = 8
embedding_dim = 8
psi_hidden = none
feature_dim = 8
buffer_capacity = 500
batch_size = 8
warmup = 50
target_sync = 100
eval_period = 100
eval_episodes = 2
metrics_period = 50
epsilon_decay_steps = 300
",
            dir.join("runs").display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn train_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&["train", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let run_dirs: Vec<_> = std::fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(run_dirs.len(), 1);
    for artifact in ["metrics.csv", "resolved.cfg", "provenance.txt", "checkpoint.ckpt"] {
        assert!(run_dirs[0].join(artifact).exists(), "missing {artifact}");
    }
    let provenance = std::fs::read_to_string(run_dirs[0].join("provenance.txt")).unwrap();
    assert!(provenance.contains("build = ") && provenance.contains("seeds = 5"));
}

#[test]
fn malformed_config_exits_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "env = bandit:risky\nmystery_knob = 7\n").unwrap();
    let out = run(&["train", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("mystery_knob") && stderr.contains("line 2"),
        "stderr: {stderr}"
    );

    let missing = run(&["train", dir.path().join("absent.cfg").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn eval_loads_the_training_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(run(&["train", cfg.to_str().unwrap()]).status.success());
    let run_dir: Vec<_> = std::fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    let ckpt = run_dir[0].join("checkpoint.ckpt");
    let out = run(&[
        "eval",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--episodes",
        "5",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("eval over 5 episodes"), "stdout: {stdout}");
}

#[test]
fn plot_renders_svg_from_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(run(&["train", cfg.to_str().unwrap()]).status.success());
    let run_dir: Vec<_> = std::fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    let csv = run_dir[0].join("metrics.csv");
    let svg_path = dir.path().join("chart.svg");
    let out = run(&[
        "plot",
        csv.to_str().unwrap(),
        "--out",
        svg_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn score_reports_normalized_score_and_gap() {
    let out = run(&["score", "--agent", "21.0", "--human", "14.6", "--random", "-20.7"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let score: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("score = "))
        .unwrap()
        .parse()
        .unwrap();
    let gap: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("gap = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((score - 1.1813031161473087).abs() < 1e-12);
    assert_eq!(gap, 0.0);

    let degenerate = run(&["score", "--agent", "1", "--human", "2", "--random", "2"]);
    assert_eq!(degenerate.status.code(), Some(2), "runtime failure exit code");
}

#[test]
fn risk_sweep_cli_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.cfg");
    std::fs::write(
        &path,
        format!(
            "
env = bandit:risky
steps = 200
seeds = 1
out_dir = {}
kappa = 0
n_online = 2
n_target = 2
k_policy = 4
embedding_dim = 8
psi_hidden = none
feature_dim = 8
buffer_capacity = 300
batch_size = 8
warmup = 40
target_sync = 100
eval_period = 100
eval_episodes = 2
metrics_period = 50
epsilon_decay_steps = 150
risk_eval_steps = 20
measures = neutral,cvar:0.5
jobs = 2
",
            dir.path().join("sweep").display()
        ),
    )
    .unwrap();
    let out = run(&["risk-sweep", path.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("sweep").join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "header plus two measures");
}
