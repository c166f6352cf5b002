use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn flatres(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flatres"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_dir(dir: &Path) -> PathBuf {
    let runs: Vec<_> = fs::read_dir(dir.join("out")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1, "{runs:?}");
    runs[0].clone()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn single_trajectory_dataset_has_fifty_rows_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "seeds = [4]\n[data]\ntrajectories = 1\n");
    ok(&flatres(tmp.path(), &["--config", "run.toml", "gen-data"]));
    let run = run_dir(tmp.path());
    let file = run.join("dataset/seed-4.csv");
    assert_eq!(data_rows(&file), 50);
    let first = fs::read(&file).unwrap();
    ok(&flatres(tmp.path(), &["--config", "run.toml", "gen-data"]));
    assert_eq!(first, fs::read(&file).unwrap());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("logs/gen-data.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"][0]["seed"], 4);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    for sub in ["dataset", "models", "trajectories", "metrics", "logs"] {
        assert!(run.join(sub).is_dir(), "{sub}");
    }
}

#[test]
fn default_dataset_has_reference_size() {
    let tmp = TempDir::new().unwrap();
    ok(&flatres(tmp.path(), &["--seeds", "1", "gen-data"]));
    assert_eq!(data_rows(&run_dir(tmp.path()).join("dataset/seed-0.csv")), 150_000);
}

#[test]
fn smoke_pipeline_with_one_seed() {
    let tmp = TempDir::new().unwrap();
    write_config(
        tmp.path(),
        "seeds = [0]\ncontrollers = [\"flat\"]\n[data]\ntrajectories = 100\n[scenario]\nduration = 1.0\n",
    );
    let args = |cmd| vec!["--config", "run.toml", cmd];
    ok(&flatres(tmp.path(), &args("gen-data")));
    let start = std::time::Instant::now();
    ok(&flatres(tmp.path(), &args("train")));
    assert!(start.elapsed().as_secs() < 60);
    let run = run_dir(tmp.path());
    let log = fs::read_to_string(run.join("logs/train-seed-0.csv")).unwrap();
    assert_eq!(log.lines().count(), 21, "header plus one row per epoch");
    assert!(run.join("models/seed-0.json").is_file());

    ok(&flatres(tmp.path(), &args("eval-open-loop")));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("metrics/open_loop.json")).unwrap()).unwrap();
    let truth = metrics["aggregate"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["model"] == "truth" && r["reference"] == "circle")
        .unwrap();
    assert!(truth["mean"].as_f64().unwrap() < 1e-4);

    ok(&flatres(tmp.path(), &args("eval-closed-loop")));
    let table = fs::read_to_string(run.join("metrics/closed_loop.csv")).unwrap();
    assert!(table.starts_with("controller,model,reference,mean,std"));
    assert!(table.contains("flat,learned,lemniscate"));
    assert!(run.join("trajectories/flat-learned-circle-seed-0.csv").is_file());

    // evaluation is deterministic for a fixed config and seed
    let first = fs::read(run.join("metrics/open_loop.csv")).unwrap();
    ok(&flatres(tmp.path(), &args("eval-open-loop")));
    let again: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("metrics/open_loop.json")).unwrap()).unwrap();
    assert_eq!(metrics["aggregate"], again["aggregate"]);
    assert_eq!(first, fs::read(run.join("metrics/open_loop.csv")).unwrap());
}

#[test]
fn evaluation_without_models_fails_cleanly() {
    let tmp = TempDir::new().unwrap();
    let out = flatres(tmp.path(), &["--seeds", "1", "eval-open-loop"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run train first"));
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let tmp = TempDir::new().unwrap();
    let out = flatres(tmp.path(), &["verify"]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 9, "{stdout}");

    let out = flatres(tmp.path(), &["verify", "--fault-injection"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL inverse identities"));
}

#[test]
fn bad_config_is_rejected() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "seeds = []\n");
    let out = flatres(tmp.path(), &["--config", "run.toml", "gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    write_config(tmp.path(), "[data]\ntrajectorys = 3\n");
    let out = flatres(tmp.path(), &["--config", "run.toml", "gen-data"]);
    assert_eq!(out.status.code(), Some(2));
}
