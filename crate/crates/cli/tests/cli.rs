use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const K: usize = 8;
const STEPS: u64 = 40;

fn slogan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slogan")).args(args).env("SLOGAN_THREADS", "1").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_config(dir: &Path, out_dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "version": 1,
        "dataset": { "kind": "synthetic_8gauss", "counts": [40, 40, 40, 40, 120, 120, 120, 120] },
        "output_dir": out_dir,
        "seed": 3,
        "train": { "batch_b": 16, "steps": STEPS, "latent_dim": 4, "hidden": 16, "history_every": 10 },
        "eval": { "n_gen_per_cluster": 50 }
    });
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

struct Run {
    _dir: TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn checkpoint(&self) -> PathBuf {
        self.out.join(format!("checkpoint_{STEPS}.json"))
    }

    fn path(&self, name: &str) -> String {
        self._dir.path().join(name).display().to_string()
    }
}

/// One trained run shared by the read-only tests.
fn trained() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("run");
        let config = tiny_config(dir.path(), &out);
        let o = slogan(&["train", config.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Run { _dir: dir, config, out }
    })
}

fn pi_of(run: &Run) -> Vec<f64> {
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.out.join("eval.json")).unwrap()).unwrap();
    report["pi"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
}

#[test]
fn train_writes_run_artifacts() {
    let run = trained();
    for f in ["config.json", "history.jsonl", "eval.json", "scatter.svg"] {
        assert!(run.out.join(f).is_file(), "missing {f}");
    }
    assert!(run.checkpoint().is_file());
    let history = fs::read_to_string(run.out.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let pi = pi_of(run);
    assert_eq!(pi.len(), K);
    assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn training_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let config = tiny_config(dir.path(), &out);
        let o = slogan(&["train", config.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outs.push(out);
    }
    for f in ["eval.json", "history.jsonl", &format!("checkpoint_{STEPS}.json")] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn out_flag_overrides_output_dir() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), &dir.path().join("unused"));
    let other = dir.path().join("other");
    let o = slogan(&["train", config.to_str().unwrap(), "--out", other.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(other.join("eval.json").is_file());
    assert!(!dir.path().join("unused").exists());
}

#[test]
fn missing_dataset_file_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let cfg = serde_json::json!({
        "version": 1,
        "dataset": { "kind": "csv", "path": "nowhere.csv" },
        "output_dir": dir.path().join("run"),
        "seed": 0
    });
    let path = dir.path().join("c.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let o = slogan(&["train", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("at `dataset.path`") && err.contains("nowhere.csv"), "{err}");
}

#[test]
fn unknown_config_key_points_at_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"version": 1, "dataset": {"kind": "synthetic_8gauss"}, "output_dir": "x", "seed": 0,
                  "train": {"stpes": 10}}"#;
    let path = dir.path().join("c.json");
    fs::write(&path, cfg).unwrap();
    let o = slogan(&["train", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("at `train.stpes`") && err.contains("unknown field"), "{err}");
}

#[test]
fn wrong_config_version_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"version": 7, "dataset": {"kind": "synthetic_8gauss"}, "output_dir": "x", "seed": 0}"#;
    let path = dir.path().join("c.json");
    fs::write(&path, cfg).unwrap();
    let o = slogan(&["train", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("at `version`"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&slogan(&["train"])), 1);
    assert_eq!(code(&slogan(&["frobnicate"])), 1);
    assert_eq!(code(&slogan(&["--help"])), 0);
}

#[test]
fn eval_writes_report_and_assignment() {
    let run = trained();
    let out = run.path("eval_out.json");
    let o = slogan(&[
        "eval",
        "--checkpoint",
        run.checkpoint().to_str().unwrap(),
        "--config",
        run.config.to_str().unwrap(),
        "--out",
        &out,
        "--assignment",
        "--matching",
        "optimal",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for key in ["ari", "nmi", "fid", "icfid", "assignment", "pi"] {
        assert!(!report[key].is_null(), "missing {key}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("class ")).count(), K);
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let run = trained();
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("d.csv");
    fs::write(&csv, "a,b,c,label\n0.1,0.2,0.3,0\n0.4,0.5,0.6,1\n0.0,0.1,0.9,0\n").unwrap();
    let cfg = serde_json::json!({
        "version": 1,
        "dataset": { "kind": "csv", "path": "d.csv" },
        "output_dir": dir.path().join("run"),
        "seed": 0
    });
    let path = dir.path().join("c.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let o = slogan(&["eval", "--checkpoint", run.checkpoint().to_str().unwrap(), "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

fn read_samples(path: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

#[test]
fn generate_all_emits_n_rows_per_component() {
    let run = trained();
    let out = run.path("all.csv");
    let svg = run.path("all.svg");
    let o = slogan(&["generate", "--checkpoint", run.checkpoint().to_str().unwrap(), "--n", "7", "--out", &out, "--svg", &svg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_samples(&out);
    assert_eq!(header, ["x0", "x1", "component"]);
    assert_eq!(rows.len(), K * 7);
    for c in 0..K {
        assert_eq!(rows.iter().filter(|r| r[2] == c.to_string()).count(), 7);
    }
    assert!(fs::read_to_string(&svg).unwrap().contains("<svg"));
}

#[test]
fn generate_means_emits_one_row_per_component() {
    let run = trained();
    let out = run.path("means.csv");
    let o = slogan(&["generate", "--checkpoint", run.checkpoint().to_str().unwrap(), "--means", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_samples(&out).1.len(), K);
}

#[test]
fn generate_mix_follows_mixing_weights() {
    let run = trained();
    let out = run.path("mix.csv");
    let n = 10_000;
    let o = slogan(&[
        "generate",
        "--checkpoint",
        run.checkpoint().to_str().unwrap(),
        "--component",
        "mix",
        "--n",
        &n.to_string(),
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_samples(&out).1;
    assert_eq!(rows.len(), n);
    for (c, p) in pi_of(run).iter().enumerate() {
        let freq = rows.iter().filter(|r| r[2] == c.to_string()).count() as f64 / n as f64;
        assert!((freq - p).abs() < 0.02, "component {c}: {freq} vs {p}");
    }
}

#[test]
fn generate_rejects_out_of_range_component() {
    let run = trained();
    let out = run.path("bad.csv");
    for comp in ["8", "nine"] {
        let o = slogan(&["generate", "--checkpoint", run.checkpoint().to_str().unwrap(), "--component", comp, "--out", &out]);
        assert_eq!(code(&o), 1, "{comp}: {}", stderr(&o));
    }
}

#[test]
fn manipulate_writes_report() {
    let run = trained();
    let dir = TempDir::new().unwrap();
    let probes = dir.path().join("p.csv");
    fs::write(&probes, "x,y\n0.0,2.0\n0.05,1.95\n-0.05,2.05\n").unwrap();
    let probe_arg = format!("2={}", probes.display());
    let o = slogan(&[
        "manipulate",
        "--checkpoint",
        run.checkpoint().to_str().unwrap(),
        "--config",
        run.config.to_str().unwrap(),
        "--probe",
        &probe_arg,
        "--steps",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manipulation.json")).unwrap()).unwrap();
    assert_eq!(report["steps"], 5);
    assert_eq!(report["targets"][0]["component"], 2);
    assert_eq!(report["targets"][0]["probes"], 3);
    assert!(dir.path().join("checkpoint_manipulated.json").is_file());
}

#[test]
fn manipulate_rejects_empty_probe_file() {
    let run = trained();
    let dir = TempDir::new().unwrap();
    let probes = dir.path().join("p.csv");
    fs::write(&probes, "x,y\n").unwrap();
    let probe_arg = format!("0={}", probes.display());
    let o = slogan(&[
        "manipulate",
        "--checkpoint",
        run.checkpoint().to_str().unwrap(),
        "--config",
        run.config.to_str().unwrap(),
        "--probe",
        &probe_arg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!dir.path().join("manipulation.json").exists());
}

#[test]
fn verify_gradients_quick_passes_and_detects_a_sign_flip() {
    let dir = TempDir::new().unwrap();
    let json = dir.path().join("v.json");
    let o = slogan(&["verify-gradients", "--quick", "--json", json.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(json.is_file());
    let o = slogan(&["verify-gradients", "--quick", "--fault", "flip-mu"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn checked_in_schema_is_current() {
    let o = slogan(&["schema"]);
    assert_eq!(code(&o), 0);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/schema.json");
    assert_eq!(String::from_utf8(o.stdout).unwrap(), fs::read_to_string(path).unwrap(), "regenerate with `slogan schema`");
}

#[test]
fn example_config_loads() {
    let run = trained();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_imbalanced.json");
    let out = run.path("example_eval.json");
    let o = slogan(&[
        "eval",
        "--checkpoint",
        run.checkpoint().to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--n-gen",
        "20",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_slogan")).args(["schema"]).env("SLOGAN_THREADS", "0").output().unwrap();
    assert_eq!(code(&o), 1);
}
