//! Drives the `atat` binary end to end on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const TINY: &str = r#"{
  "seed": 5,
  "data": { "train_pairs": 20, "test_pairs": 100, "source": { "surrogate_emg_pool": 400 } },
  "autoencoder": { "epochs": 1, "batch": 10 },
  "gan": { "epochs": 1, "batch": 10, "cycles_per_iteration": 1 },
  "gate": { "epochs": 1, "batch": 10 }
}"#;

fn atat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atat"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn only_dir(parent: &Path, suffix: &str) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(parent)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

/// Workspace with generated data and one trained tiny system.
struct Trained {
    dir: TempDir,
    models: PathBuf,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.json"), TINY).unwrap();
        let out = atat(dir.path(), &["--config", "tiny.json", "generate"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let out = atat(dir.path(), &["--config", "tiny.json", "train-all"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let models = only_dir(&dir.path().join("runs"), "-seed5-train-all");
        Trained { dir, models }
    })
}

#[test]
fn usage_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&atat(dir.path(), &[])), 1);
    assert_eq!(code(&atat(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&atat(dir.path(), &["--seed", "x", "generate"])), 1);
    assert_eq!(code(&atat(dir.path(), &["--help"])), 0);

    fs::write(dir.path().join("bad.json"), r#"{"seeed": 1}"#).unwrap();
    let out = atat(dir.path(), &["--config", "bad.json", "generate"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bad.json"));
    assert_eq!(code(&atat(dir.path(), &["--config", "missing.json", "generate"])), 1);
    assert_eq!(code(&atat(dir.path(), &["--snr", "2,-7", "generate"])), 1);
    assert!(!dir.path().join("data").exists());
}

#[test]
fn missing_data_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = atat(dir.path(), &["--data-dir", "nowhere", "train-ae"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace(r#""epochs": 1, "batch": 10 },"#, r#""epochs": 3, "batch": 10, "lr": 1e30 },"#);
    assert!(cfg.contains("1e30"));
    fs::write(dir.path().join("hot.json"), cfg).unwrap();
    assert_eq!(code(&atat(dir.path(), &["--config", "hot.json", "generate"])), 0);
    let out = atat(dir.path(), &["--config", "hot.json", "train-ae"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn generate_is_deterministic_and_honours_snr() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    for d in ["a", "b"] {
        assert_eq!(code(&atat(dir.path(), &["--config", "tiny.json", "--data-dir", d, "generate"])), 0);
    }
    for f in ["train/manifest.json", "train/clean_eeg.f32", "test/emg_artifact.f32", "corpus.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }

    let out = atat(dir.path(), &["--config", "tiny.json", "--data-dir", "single", "--snr", "-7", "generate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let info: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("single/corpus.json")).unwrap()).unwrap();
    assert_eq!(info["snr_levels"], serde_json::json!([-7.0]));
    assert_eq!(info["test_pairs"], 100);
}

#[test]
fn train_all_writes_checkpoints_and_echoes_config() {
    let t = trained();
    for f in ["gate.atat", "snr_-7dB.atat", "snr_2dB.atat", "timing.json", "gate_trace.csv", "ae_loss_snr_2dB.csv"] {
        assert!(t.models.join(f).exists(), "missing {f}");
    }
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.models.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 5);
    assert_eq!(echoed["data"]["train_pairs"], 20);
    assert_eq!(echoed["gan"]["cycles_per_iteration"], 1);
}

#[test]
fn eval_reports_100_rows_per_level() {
    let t = trained();
    let models = t.models.to_string_lossy().into_owned();
    let out = atat(t.dir.path(), &["--config", "tiny.json", "--out", "evals", "eval", "--models", &models]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run = only_dir(&t.dir.path().join("evals"), "-seed5-eval");
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("snr_db,segment_id,cc,trrmse,srrmse"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.iter().filter(|l| l.starts_with("-7,")).count(), 100);
    assert_eq!(rows.iter().filter(|l| l.starts_with("2,")).count(), 100);
    for f in ["summary.json", "table.csv", "cc_by_snr.svg", "config.json", "timing.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["surrogate_data"], true);
}

#[test]
fn denoise_writes_one_row_per_input() {
    let t = trained();
    let models = t.models.to_string_lossy().into_owned();
    let rows: Vec<String> = (0..3)
        .map(|r| (0..512).map(|i| format!("{}", ((i * (r + 3)) as f64 * 0.01).sin())).collect::<Vec<_>>().join(","))
        .collect();
    fs::write(t.dir.path().join("input.csv"), rows.join("\n") + "\n").unwrap();
    let out = atat(
        t.dir.path(),
        &["--config", "tiny.json", "--out", "denoised", "denoise", "--models", &models, "--input", "input.csv"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run = only_dir(&t.dir.path().join("denoised"), "-seed5-denoise");
    let text = fs::read_to_string(run.join("denoised.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.split(',').count() == 512));
    assert_eq!(fs::read_to_string(run.join("routing.csv")).unwrap().lines().count(), 4);
}

#[test]
fn corrupt_checkpoint_is_a_config_error_naming_the_path() {
    let t = trained();
    let copy = t.dir.path().join("corrupt");
    fs::create_dir_all(&copy).unwrap();
    for e in fs::read_dir(&t.models).unwrap() {
        let p = e.unwrap().path();
        fs::copy(&p, copy.join(p.file_name().unwrap())).unwrap();
    }
    let ckpt = copy.join("snr_2dB.atat");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&ckpt, bytes).unwrap();
    let out = atat(t.dir.path(), &["--config", "tiny.json", "--out", "bad", "eval", "--models", "corrupt"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("snr_2dB.atat"), "{}", stderr(&out));
}
