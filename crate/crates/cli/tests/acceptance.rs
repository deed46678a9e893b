//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Criteria 5 and 7–10 drive the `atat` binary through `generate`,
//! `train-all` (twice) and `eval` at the default scale. Benchmark data is
//! read from `ATAT_EEGDENOISENET_DIR` (`EEG_all_epochs.csv`,
//! `EMG_all_epochs.csv`) when set, otherwise the built-in surrogate is used.
//! Failing criteria are reported but only fail the process when
//! `ATAT_ACCEPTANCE_STRICT=1` is set.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use atat_autograd::suite::run_catalogue;
use atat_core::bench::run_benchmark;
use atat_core::config::RunConfig;
use atat_core::mask::{build_mask, splice, windowed_cc, NoiseMask, NoiseProfile};
use atat_core::metrics::{pearson_cc, srrmse, trrmse, PsdConfig};
use atat_core::pipeline::{train_adversarial_stage, train_autoencoder_stage, AtatSystem};
use atat_core::signal::{measured_snr_db, mix_raw, synth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

fn oracle_cc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sx, sy) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let sxy: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sxx: f64 = a.iter().map(|x| x * x).sum();
    let syy: f64 = b.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

fn oracle_rrmse(d: &[f64], c: &[f64]) -> f64 {
    let num: f64 = d.iter().zip(c).map(|(d, c)| (d - c).powi(2)).sum::<f64>();
    let den: f64 = c.iter().map(|c| c * c).sum::<f64>();
    (num / den).sqrt()
}

fn oracle_psd(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let w: Vec<f64> = (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect();
    let u: f64 = w.iter().map(|v| v * v).sum::<f64>() * 256.0;
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for t in 0..n {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                re += x[t] * w[t] * ang.cos();
                im += x[t] * w[t] * ang.sin();
            }
            let p = (re * re + im * im) / u;
            if k == 0 || (n % 2 == 0 && k == n / 2) { p } else { 2.0 * p }
        })
        .collect()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let outcomes = match run_catalogue(10) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("suite error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let failing: Vec<&str> = outcomes.iter().filter(|o| !o.passes(1e-3)).map(|o| o.name.as_str()).collect();
    let worst = outcomes.iter().map(|o| o.worst.max_rel_error).fold(0.0, f64::max);
    outcome(
        failing.is_empty() && secs < 300.0,
        format!("{} ops x 10 points, worst rel err {worst:.2e}, {secs:.1} s, failing {failing:?}", outcomes.len()),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(8..128);
        let (a, b) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        worst = worst.max((pearson_cc(&a, &b).unwrap() - oracle_cc(&a, &b)).abs());
        worst = worst.max((trrmse(&a, &b).unwrap() - oracle_rrmse(&a, &b)).abs());
        let s = srrmse(&a, &b, &PsdConfig::Periodogram).unwrap();
        worst = worst.max((s - oracle_rrmse(&oracle_psd(&a), &oracle_psd(&b))).abs());
        let (a, b) = (random_vec(&mut rng, 512), random_vec(&mut rng, 512));
        let prof = windowed_cc(&a, &b, 64, 32).unwrap();
        for (w, cc) in prof.cc_per_window.iter().enumerate() {
            let r = w * 32..w * 32 + 64;
            worst = worst.max((cc - oracle_cc(&a[r.clone()], &b[r])).abs());
        }
    }
    outcome(worst < 1e-9, format!("max abs deviation {worst:.2e} over 100 vectors"))
}

fn mixing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let eeg = synth::eeg_surrogate(&mut rng);
        let emg = synth::emg_surrogate(&mut rng);
        let snr = rng.random_range(-7.0..=2.0);
        let (y, _) = mix_raw(&eeg, &emg, snr).unwrap();
        let noise: Vec<f64> = y.iter().zip(&eeg).map(|(y, x)| y - x).collect();
        worst = worst.max((measured_snr_db(&eeg, &noise).unwrap() - snr).abs());
    }
    outcome(worst < 1e-6, format!("max |measured - target| {worst:.2e} dB over 1000 pairs"))
}

fn mask_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let profile = |cc: Vec<f64>, threshold| NoiseProfile {
        window_len: 64,
        stride: 32,
        threshold,
        cc_per_window: cc,
        degenerate_windows: vec![],
        signal_len: 512,
    };
    let (mut monotone, mut coverage, mut splicing) = (true, true, true);
    for _ in 0..500 {
        let cc: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let t1 = rng.random_range(-1.0..=1.0);
        let t2 = t1 + rng.random_range(0.0..1.0);
        let p1 = profile(cc.clone(), t1);
        let m1 = build_mask(&p1);
        let m2 = build_mask(&profile(cc.clone(), t2));
        monotone &= m1.mask.iter().zip(&m2.mask).all(|(a, b)| !a || *b);
        coverage &= (0..512).all(|i| {
            let covered = cc.iter().enumerate().any(|(w, &c)| c < t1 && (w * 32..w * 32 + 64).contains(&i));
            covered == m1.mask[i]
        });

        let bits: Vec<bool> = (0..512).map(|_| rng.random_bool(0.3)).collect();
        let m = NoiseMask { mask: bits, profile: p1 };
        let ae = random_vec(&mut rng, 512);
        let tr = random_vec(&mut rng, 512);
        let xf = rng.random_range(0..16);
        let out = splice(&ae, &tr, &m, xf).unwrap();
        let again = splice(&out, &tr, &m, xf).unwrap();
        let hard = splice(&ae, &tr, &m, 0).unwrap();
        splicing &= (0..512).all(|i| {
            let outside = !m.mask[i] && out[i] == ae[i] && again[i] == out[i];
            let inside = m.mask[i] && hard[i] == tr[i];
            outside || inside
        });
        splicing &= splice(&hard, &tr, &m, 0).unwrap() == hard;
    }
    outcome(
        monotone && coverage && splicing,
        format!("500 random cases: monotone {monotone}, coverage {coverage}, splice {splicing}"),
    )
}

fn fixture_learning() -> Outcome {
    let start = Instant::now();
    let snr = -2.0;
    let cfg = RunConfig { seed: 0, snr_levels: vec![snr], ..RunConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let train = synth::sinusoid_burst_fixture(&mut rng, 120, snr);
    let test = synth::sinusoid_burst_fixture(&mut rng, 100, snr);
    let run = || -> atat_core::Result<(f64, f64, Option<f64>, Option<f64>, usize)> {
        let (mut model, _) = train_autoencoder_stage(&train, snr, &cfg)?;
        train_adversarial_stage(&mut model, &train, &cfg)?;
        let system = AtatSystem { gate: None, models: vec![model], mask: cfg.mask };
        let s = run_benchmark(&system, &test, &cfg)?.summaries.remove(0);
        Ok((
            s.ae_only_cc.mean,
            s.contaminated_cc.mean,
            s.masked_heavy_cc,
            s.masked_heavy_ae_only_cc,
            s.masked_heavy_segments,
        ))
    };
    let (ae, input, heavy_full, heavy_ae, heavy_n) = match run() {
        Ok(v) => v,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let ae_gain = ae - input;
    let full_gain = match (heavy_full, heavy_ae) {
        (Some(f), Some(a)) => f - a,
        _ => f64::NAN,
    };
    outcome(
        ae_gain >= 0.1 && full_gain >= 0.02 && secs < 900.0,
        format!(
            "AE CC {ae:.3} vs input {input:.3} (gain {ae_gain:+.3}, need >= 0.1); \
             masked-heavy ({heavy_n} segs) AT-AT {heavy_full:.3?} vs AE-only {heavy_ae:.3?} \
             (gain {full_gain:+.3}, need >= 0.02); {secs:.0} s"
        ),
    )
}

fn atat(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_atat"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`atat {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// The run directory ending in `suffix` that is not already in `seen`.
fn new_run_dir(parent: &Path, suffix: &str, seen: &[PathBuf]) -> Result<PathBuf, String> {
    fs::read_dir(parent)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(suffix) && !seen.contains(p))
        .ok_or_else(|| format!("no new run directory ending in {suffix} under {}", parent.display()))
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

/// Outputs of two identical full CLI runs.
struct Runs {
    train: [PathBuf; 2],
    eval: [PathBuf; 2],
    surrogate: bool,
    train_seconds: f64,
}

fn cli_runs(work: &Path) -> Result<Runs, String> {
    let mut cfg = RunConfig::default();
    let surrogate = match std::env::var_os("ATAT_EEGDENOISENET_DIR") {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            cfg.data.source.eeg_csv = Some(dir.join("EEG_all_epochs.csv"));
            cfg.data.source.emg_csv = Some(dir.join("EMG_all_epochs.csv"));
            false
        }
        None => true,
    };
    cfg.save(work.join("acceptance.json")).map_err(|e| e.to_string())?;
    let base = ["--config", "acceptance.json"];
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let call = |args: Vec<String>| atat(work, &args.iter().map(String::as_str).collect::<Vec<_>>());

    call(with(&["generate"]))?;
    let start = Instant::now();
    let mut train = Vec::new();
    let mut eval = Vec::new();
    // Both runs use identical arguments; run directories are unique per invocation.
    let out = work.join(RunConfig::default().out_dir);
    for run in 1..=2 {
        eprintln!("acceptance: train-all run {run} of 2 (this takes a while)");
        call(with(&["train-all"]))?;
        let models = new_run_dir(&out, "-train-all", &train)?;
        let models_s = models.to_string_lossy().into_owned();
        eprint!("{}", call(with(&["eval", "--models", &models_s]))?);
        train.push(models);
        eval.push(new_run_dir(&out, "-eval", &eval)?);
    }
    Ok(Runs {
        train: [train[0].clone(), train[1].clone()],
        eval: [eval[0].clone(), eval[1].clone()],
        surrogate,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

fn determinism(runs: &Runs) -> Outcome {
    let mut compared = Vec::new();
    let mut differing = Vec::new();
    let mut files: Vec<(PathBuf, PathBuf)> = Vec::new();
    if let Ok(entries) = fs::read_dir(&runs.train[0]) {
        for e in entries.flatten() {
            let name = e.file_name();
            if name.to_string_lossy().ends_with(".atat") {
                files.push((e.path(), runs.train[1].join(&name)));
            }
        }
    }
    for name in ["summary.json", "metrics.csv", "table.csv"] {
        files.push((runs.eval[0].join(name), runs.eval[1].join(name)));
    }
    files.sort();
    for (a, b) in &files {
        let name = a.file_name().unwrap().to_string_lossy().into_owned();
        match (fs::read(a), fs::read(b)) {
            (Ok(x), Ok(y)) if x == y => compared.push(name),
            _ => differing.push(name),
        }
    }
    outcome(
        differing.is_empty() && compared.len() >= 6,
        format!("byte-identical: {compared:?}; differing: {differing:?}"),
    )
}

fn level<'a>(summary: &'a Value, snr: f64) -> Option<&'a Value> {
    summary["summaries"].as_array()?.iter().find(|s| s["snr_db"].as_f64() == Some(snr))
}

fn benchmark(runs: &Runs) -> Outcome {
    let summary = match read_json(&runs.eval[0].join("summary.json")) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let get = |snr: f64, metric: &str, field: &str| {
        level(&summary, snr).and_then(|s| s[metric][field].as_f64()).unwrap_or(f64::NAN)
    };
    let (cc2, cc7) = (get(2.0, "cc", "mean"), get(-7.0, "cc", "mean"));
    let (tr2, tr7) = (get(2.0, "trrmse", "mean"), get(-7.0, "trrmse", "mean"));
    let (ae2, ae7) = (get(2.0, "ae_only_cc", "mean"), get(-7.0, "ae_only_cc", "mean"));
    let n = |snr| level(&summary, snr).and_then(|s| s["segments"].as_u64()).unwrap_or(0);
    let pass = cc2 >= 0.90 && cc7 >= 0.60 && tr2 <= 0.40 && tr7 <= 0.90 && n(2.0) == 100 && n(-7.0) == 100;
    let source = if runs.surrogate { "surrogate data" } else { "EEGdenoiseNet data" };
    outcome(
        pass,
        format!(
            "{source}: 2 dB CC {cc2:.3} tRRMSE {tr2:.3}; -7 dB CC {cc7:.3} tRRMSE {tr7:.3} \
             (AE-only CC {ae2:.3} / {ae7:.3}; n = {}/{})",
            n(2.0),
            n(-7.0)
        ),
    )
}

fn gate_accuracy(runs: &Runs) -> Outcome {
    let summary = match read_json(&runs.eval[0].join("summary.json")) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let (mut right, mut total) = (0.0, 0.0);
    for snr in [-7.0, 2.0] {
        if let Some(s) = level(&summary, snr) {
            let n = s["segments"].as_f64().unwrap_or(0.0);
            right += s["gate_accuracy"].as_f64().unwrap_or(0.0) * n;
            total += n;
        }
    }
    let acc = right / total;
    outcome(acc >= 0.95, format!("test accuracy {acc:.3} over {total} segments"))
}

fn footprint(runs: &Runs) -> Outcome {
    let summary = match read_json(&runs.eval[0].join("summary.json")) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let dense = |i: usize, o: usize| i * o + o;
    let conv1d = |ci: usize, co: usize, k: usize| co * ci * k + co;
    let lstm = |i: usize, h: usize| 4 * h * (i + h + 1);
    let ae = conv1d(1, 32, 3) + 64 + conv1d(32, 64, 3) + 128 + conv1d(64, 128, 3) + 256
        + conv1d(128, 64, 3) + 128 + conv1d(64, 32, 3) + 64 + conv1d(32, 1, 3);
    let encoder_layer = 4 * dense(16, 16) + 2 * (2 * 16) + dense(16, 128) + dense(128, 16);
    let gen = dense(2, 16) + 512 * 16 + 16 + 2 * encoder_layer + conv1d(16, 16, 3) + dense(16, 1);
    let disc = conv1d(1, 64, 3) + conv1d(64, 128, 3) + dense(128 * 512, 1);
    let gate = (16 * 9 + 16) + 2 * 16 + lstm(16, 32) + lstm(32, 32) + lstm(16, 32) + lstm(32, 32)
        + (8 * 9 + 8) + dense(8 * 32 * 32, 64) + dense(2048 + 1024 + 64, 64) + dense(64, 2);
    let total = 2 * (ae + gen + disc) + gate;
    let c = &summary["param_counts"];
    let got = |k: &str| c[k].as_u64().unwrap_or(0) as usize;
    let pairs = [
        ("autoencoder", ae),
        ("generator", gen),
        ("discriminator", disc),
        ("gate", gate),
        ("total", total),
    ];
    let mismatched: Vec<String> = pairs
        .iter()
        .filter(|(k, v)| got(k) != *v)
        .map(|(k, v)| format!("{k}: report {} vs hand {v}", got(k)))
        .collect();
    outcome(
        mismatched.is_empty(),
        format!("AE {ae}, generator {gen}, discriminator {disc}, gate {gate}, total {total}; mismatches {mismatched:?}"),
    )
}

fn timing(runs: &Runs) -> Outcome {
    match read_json(&runs.train[0].join("timing.json")) {
        Ok(t) => {
            let total = t["total_seconds"].as_f64().unwrap_or(f64::NAN);
            let pre = t["preprocessing_fraction"].as_f64().unwrap_or(f64::NAN);
            outcome(
                total.is_finite() && pre.is_finite(),
                format!(
                    "training wall-clock {total:.1} s, gate pre-processing {:.1}% (report only; both runs incl. eval {:.0} s)",
                    100.0 * pre,
                    runs.train_seconds
                ),
            )
        }
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient checks", gradients());
    report(2, "metric oracles", metric_oracles());
    report(3, "mixing fidelity", mixing());
    report(4, "mask semantics", mask_semantics());

    let work = tempfile::tempdir().expect("temporary directory");
    match cli_runs(work.path()) {
        Ok(runs) => {
            report(5, "determinism", determinism(&runs));
            report(6, "synthetic fixture learning", fixture_learning());
            report(7, "benchmark targets", benchmark(&runs));
            report(8, "SNR gate accuracy", gate_accuracy(&runs));
            report(9, "parameter accounting", footprint(&runs));
            report(10, "timing report", timing(&runs));
        }
        Err(e) => {
            for (n, name) in [(5, "determinism"), (7, "benchmark targets"), (8, "SNR gate accuracy"), (9, "parameter accounting"), (10, "timing report")] {
                report(n, name, outcome(false, format!("pipeline run failed: {e}")));
            }
            report(6, "synthetic fixture learning", fixture_learning());
        }
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        if std::env::var("ATAT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
