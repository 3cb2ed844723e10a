use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ssrnas");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], root: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .env("SSRNAS_OUTPUT_ROOT", root)
        .current_dir(root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn entropy_of(probs: &[Value]) -> f64 {
    probs
        .iter()
        .map(|p| p.as_f64().unwrap())
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

#[test]
fn cardinality_of_the_full_scale_space() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("full_space.toml");
    let o = run(&["cardinality", "-c", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("log10 = 324.44"), "{out}");
    assert!(out.contains("≈ 2.77e324"), "{out}");
}

#[test]
fn cardinality_of_the_default_space_counts_39() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["cardinality"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stdout(&o).contains("distinct architectures: 39"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn unknown_command_prints_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("Usage"), "{err}");
    for cmd in ["search", "oracle", "verify", "ablate", "cardinality"] {
        assert!(err.contains(cmd), "{err}");
    }
    assert_eq!(run(&[], tmp.path()).status.code(), Some(1));
    assert_eq!(run(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn config_errors_exit_1_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.toml", "[search]\nh = 1.5\n");
    let o = run(&["search", "-c", bad.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("search.h"), "{}", stderr(&o));
    assert!(stderr(&o).contains("h must be in (0,1)"));

    let unknown = write_config(
        tmp.path(),
        "unknown.toml",
        "[task]\nnoise = 0.1\nsignal = 2\n",
    );
    let o = run(&["search", "-c", unknown.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("task.signal"), "{}", stderr(&o));

    let o = run(&["search", "-c", "missing.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    // nothing was created for rejected configs
    assert!(!tmp.path().join("search").exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 2);
}

#[test]
fn zero_epoch_search_exits_3_with_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "zero.toml", "[search]\nepochs = 0\n");
    let o = run(
        &["search", "-c", cfg.to_str().unwrap(), "--run-id", "zero"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let dir = tmp.path().join("zero");
    for f in [
        "config.toml",
        "trajectory.jsonl",
        "architecture.json",
        "architecture.txt",
        "gap.json",
        "summary.json",
        "checkpoint.json",
    ] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let lines = read_lines(&dir.join("trajectory.jsonl"));
    assert_eq!(lines.len(), 1);
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], Value::Bool(false));
    let arch: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("architecture.json")).unwrap()).unwrap();
    assert_eq!(arch["encoding"], "d1[r1s1c8/8]");
    assert_eq!(arch["exact_flops"].as_f64(), Some(30912.0));
}

#[test]
fn echoed_config_lists_every_effective_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "zero.toml", "[search]\nepochs = 0\n");
    run(
        &["search", "-c", cfg.to_str().unwrap(), "--run-id", "echo"],
        tmp.path(),
    );
    let echoed = fs::read_to_string(tmp.path().join("echo/config.toml")).unwrap();
    for key in [
        "run_id = \"echo\"",
        "h = 0.1",
        "depth = 0.15",
        "dilation_spatial = 0.3",
        "lr = 0.002",
        "lr = 0.0003",
        "[retrain]",
        "[verify]",
        "[ablate]",
    ] {
        assert!(echoed.contains(key), "{key} missing:\n{echoed}");
    }
    // the echo is itself a valid config
    let again = write_config(tmp.path(), "again.toml", &echoed);
    let o = run(
        &["search", "-c", again.to_str().unwrap(), "--run-id", "echo2"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn existing_run_id_is_never_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "zero.toml", "[search]\nepochs = 0\n");
    let args = ["search", "-c", cfg.to_str().unwrap(), "--run-id", "dup"];
    assert_eq!(run(&args, tmp.path()).status.code(), Some(3));
    let marker = tmp.path().join("dup/summary.json");
    fs::write(&marker, "sentinel").unwrap();
    let o = run(&args, tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("already exists"), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&marker).unwrap(), "sentinel");
}

#[test]
fn output_root_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "zero.toml", "[search]\nepochs = 0\n");
    let c = cfg.to_str().unwrap();
    // environment variable
    run(&["search", "-c", c, "--run-id", "a"], tmp.path());
    assert!(tmp.path().join("a/summary.json").is_file());
    // file beats environment
    let in_file = write_config(
        tmp.path(),
        "file.toml",
        "output_dir = \"from_file\"\n[search]\nepochs = 0\n",
    );
    run(
        &["search", "-c", in_file.to_str().unwrap(), "--run-id", "b"],
        tmp.path(),
    );
    assert!(tmp.path().join("from_file/b/summary.json").is_file());
    // flag beats both
    let flag = tmp.path().join("from_flag");
    run(
        &[
            "search",
            "-c",
            in_file.to_str().unwrap(),
            "--run-id",
            "c",
            "--output-root",
            flag.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(flag.join("c/summary.json").is_file());
}

#[test]
fn shipped_tiny_config_converges_with_a_consistent_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("tiny.toml");
    let o = run(&["search", "-c", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = tmp.path().join("tiny-ssr");
    let lines = read_lines(&dir.join("trajectory.jsonl"));
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let converged = summary["converged_epoch"].as_u64().unwrap() as usize;
    assert_eq!(lines.len(), converged + 1);
    for (i, rec) in lines.iter().enumerate() {
        assert_eq!(rec["epoch"].as_u64(), Some(i as u64));
        let recomputed: f64 = rec["groups"]
            .as_array()
            .unwrap()
            .iter()
            .map(|g| entropy_of(g["probs"].as_array().unwrap()))
            .sum();
        let total = rec["total_entropy"].as_f64().unwrap();
        assert!(
            (recomputed - total).abs() <= 1e-9,
            "epoch {i}: {recomputed} vs {total}"
        );
        let levels = &rec["level_entropy"];
        let sum: f64 = ["depth", "dilation_spatial", "channel"]
            .iter()
            .map(|k| levels[k].as_f64().unwrap())
            .sum();
        assert!((sum - total).abs() <= 1e-9);
    }
    assert_eq!(lines.last().unwrap()["total_entropy"].as_f64(), Some(0.0));
    let table = fs::read_to_string(dir.join("architecture.txt")).unwrap();
    assert!(
        table.contains("Stage  Depth  Layer  Dilation  Spatial  Channels"),
        "{table}"
    );
    let gap: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("gap.json")).unwrap()).unwrap();
    assert_eq!(gap["gap"].as_f64(), Some(0.0));
}

#[test]
fn verify_reports_and_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "v.toml",
        "[verify]\npoints = 30\ntapes = 22\narch_states = 2\n",
    );
    let o = run(
        &["verify", "-c", cfg.to_str().unwrap(), "--run-id", "v"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("taylor: 0 violations"),
        "{}",
        stdout(&o)
    );
    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("v/verify.json")).unwrap())
            .unwrap();
    assert_eq!(report["pass"], Value::Bool(true));
    assert_eq!(report["points"].as_array().unwrap().len(), 30);
    assert_eq!(
        report["finite_differences"]["uncovered"]
            .as_array()
            .unwrap()
            .len(),
        0
    );
}

#[test]
fn oracle_ranks_the_tiny_space() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "o.toml", "[retrain]\nepochs = 1\n");
    let o = run(
        &["oracle", "-c", cfg.to_str().unwrap(), "--run-id", "o"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_lines(&tmp.path().join("o/oracle.jsonl"));
    assert_eq!(rows.len(), 39);
    let metrics: Vec<f64> = rows.iter().map(|r| r["metric"].as_f64().unwrap()).collect();
    assert!(metrics.windows(2).all(|w| w[0] >= w[1]));
    assert!(metrics.iter().all(|m| (0.0..=1.0).contains(m)));
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["rank"].as_u64(), Some(i as u64));
    }
}

#[test]
fn oracle_refuses_the_full_scale_space() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("full_space.toml");
    let o = run(
        &["oracle", "-c", cfg.to_str().unwrap(), "--run-id", "big"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("enumeration cap"), "{}", stderr(&o));
    assert!(!tmp.path().join("big").exists());
}

#[test]
fn ablate_writes_one_row_per_arm_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.toml",
        "[search]\nepochs = 2\nbatch_size = 64\n[ablate]\nseeds = [3, 4]\narms = [\"ssr\", \"none\"]\nretrain = false\n",
    );
    let o = run(
        &["ablate", "-c", cfg.to_str().unwrap(), "--run-id", "a"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = tmp.path().join("a");
    let rows = read_lines(&dir.join("ablation.jsonl"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["arm"], "ssr");
    assert_eq!(rows[3]["arm"], "none");
    assert_eq!(rows[3]["seed"].as_u64(), Some(4));
    assert!(rows.iter().all(|r| r["metric"].is_null()));
    for run_dir in ["ssr-seed3", "ssr-seed4", "none-seed3", "none-seed4"] {
        let traj = read_lines(&dir.join("arms").join(run_dir).join("trajectory.jsonl"));
        assert_eq!(traj.len(), 3);
    }
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("ablation_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
    assert!(fs::read_to_string(dir.join("ablation.txt"))
        .unwrap()
        .contains("Zero-entropy epoch"));
}
