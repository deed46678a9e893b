//! End-to-end plumbing on a tiny trained system: checkpoints, routing,
//! threading, parameter accounting and report emission.

use std::fs;
use std::sync::OnceLock;

use atat_autograd::{Dense, ParamStore};
use atat_core::bench::{count_parameters, emit_report, run_benchmark, segment_scores, METRICS_CSV, SUMMARY_JSON};
use atat_core::config::RunConfig;
use atat_core::metrics::PsdConfig;
use atat_core::pipeline::{model_file, save_gate, train_all, AtatSystem, SnrModel, GATE_FILE};
use atat_core::signal::{mix_raw, synth, MixedPair};
use atat_core::CoreError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig { seed: 3, ..RunConfig::default() };
    cfg.autoencoder.epochs = 2;
    cfg.autoencoder.batch = 10;
    cfg.gan.epochs = 1;
    cfg.gan.batch = 10;
    cfg.gan.cycles_per_iteration = 1;
    cfg.gate.epochs = 2;
    cfg.gate.batch = 10;
    cfg
}

fn pairs(seed: u64, per_level: usize, levels: &[f64]) -> Vec<MixedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &snr in levels {
        for i in 0..per_level {
            let eeg = synth::eeg_surrogate(&mut rng);
            let emg = synth::emg_surrogate(&mut rng);
            let (contaminated, lambda) = mix_raw(&eeg, &emg, snr).unwrap();
            out.push(MixedPair { id: format!("s{snr}_{i}"), snr_db: snr, lambda, clean: eeg, contaminated });
        }
    }
    out
}

fn trained() -> &'static AtatSystem {
    static SYSTEM: OnceLock<AtatSystem> = OnceLock::new();
    SYSTEM.get_or_init(|| train_all(&pairs(1, 20, &[-7.0, 2.0]), &tiny_config()).unwrap().system)
}

fn outputs(system: &AtatSystem, raw: &[Vec<f64>], threads: usize) -> Vec<Vec<f64>> {
    system.denoise(raw, threads).unwrap().into_iter().map(|d| d.output).collect()
}

#[test]
fn checkpoints_round_trip() {
    let system = trained();
    let dir = tempfile::tempdir().unwrap();
    let written = system.save(dir.path()).unwrap();
    assert_eq!(written.len(), 3);
    assert!(dir.path().join(model_file(-7.0)).exists());
    assert!(dir.path().join(GATE_FILE).exists());

    let loaded = AtatSystem::load(dir.path(), &tiny_config()).unwrap();
    let raw: Vec<Vec<f64>> = pairs(2, 5, &[-7.0, 2.0]).into_iter().map(|p| p.contaminated).collect();
    assert_eq!(outputs(system, &raw, 1), outputs(&loaded, &raw, 1));
    for (a, b) in system.models.iter().zip(&loaded.models) {
        assert_eq!((a.gain, a.ae_gain), (b.gain, b.ae_gain));
        assert!(b.adversarial.is_some());
    }

    // Saving the reloaded system reproduces the same bytes.
    let again = tempfile::tempdir().unwrap();
    loaded.save(again.path()).unwrap();
    for name in [model_file(-7.0), model_file(2.0), GATE_FILE.to_string()] {
        assert_eq!(fs::read(dir.path().join(&name)).unwrap(), fs::read(again.path().join(&name)).unwrap());
    }
}

#[test]
fn bad_checkpoints_are_config_errors_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    trained().save(dir.path()).unwrap();
    let path = dir.path().join(model_file(2.0));
    let mut bytes = fs::read(&path).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    fs::write(&path, bytes).unwrap();
    match SnrModel::load(dir.path(), 2.0) {
        Err(CoreError::Config(msg)) => assert!(msg.contains(&path.display().to_string()), "{msg}"),
        other => panic!("expected a config error, got {:?}", other.err()),
    }
    assert!(matches!(SnrModel::load(dir.path(), -2.0), Err(CoreError::Config(_))));

    // A gate trained for other levels is refused.
    let mut cfg = tiny_config();
    cfg.snr_levels = vec![-7.0, -2.0];
    assert!(matches!(AtatSystem::load(dir.path(), &cfg), Err(CoreError::Config(_))));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let raw: Vec<Vec<f64>> = pairs(3, 25, &[-7.0, 2.0]).into_iter().map(|p| p.contaminated).collect();
    let one = outputs(trained(), &raw, 1);
    assert_eq!(one, outputs(trained(), &raw, 3));
    assert_eq!(one, outputs(trained(), &raw, 16));
}

#[test]
fn gate_only_routes() {
    let system = trained();
    let raw: Vec<Vec<f64>> = pairs(4, 6, &[-7.0, 2.0]).into_iter().map(|p| p.contaminated).collect();
    let copy = raw.clone();
    let routes = system.route(&raw).unwrap();
    assert_eq!(raw, copy);
    let denoised = system.denoise(&raw, 1).unwrap();
    for ((d, (snr, probs)), y) in denoised.iter().zip(&routes).zip(&raw) {
        assert_eq!(d.snr_db, *snr);
        assert_eq!(&d.probabilities, probs);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // The selected model sees the raw segment untouched.
        let direct = system.model_for(*snr).unwrap().denoise(&[y.clone()], &system.mask).unwrap();
        assert_eq!(direct[0].output, d.output);
    }
}

#[test]
fn several_models_need_a_gate() {
    let dir = tempfile::tempdir().unwrap();
    for m in &trained().models {
        m.save(dir.path()).unwrap();
    }
    assert!(matches!(AtatSystem::load(dir.path(), &tiny_config()), Err(CoreError::Config(_))));
    let mut cfg = tiny_config();
    cfg.snr_levels = vec![2.0];
    let single = AtatSystem::load(dir.path(), &cfg).unwrap();
    assert!(single.gate.is_none());
    let raw = vec![pairs(5, 1, &[-7.0]).remove(0).contaminated];
    assert_eq!(single.denoise(&raw, 1).unwrap()[0].snr_db, 2.0);

    save_gate(trained().gate.as_ref().unwrap(), dir.path()).unwrap();
    assert!(AtatSystem::load(dir.path(), &tiny_config()).is_ok());
}

#[test]
fn config_json_round_trips_and_rejects_unknown_keys() {
    let cfg = tiny_config();
    assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    let partial = RunConfig::from_json(r#"{"seed": 9, "mask": {"threshold": 0.7}}"#).unwrap();
    assert_eq!((partial.seed, partial.mask.threshold, partial.mask.window_len), (9, 0.7, 64));
    assert!(RunConfig::from_json(r#"{"sead": 9}"#).is_err());

    let mut bad = RunConfig::default();
    bad.snr_levels = vec![2.0, -7.0];
    assert!(matches!(bad.validate(), Err(CoreError::InvalidConfig(_))));
    let mut bad = RunConfig::default();
    bad.mask.window_len = 1000;
    assert!(bad.validate().is_err());

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    match RunConfig::load(&missing) {
        Err(CoreError::Config(msg)) => assert!(msg.contains("nope.json")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn parameter_counting() {
    let empty = AtatSystem { gate: None, models: vec![], mask: Default::default() };
    assert_eq!(count_parameters(&empty).total, 0);

    let mut store = ParamStore::new();
    Dense::new(&mut store, "d", 16, 1, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(store.num_parameters(), 17);

    let c = count_parameters(trained());
    assert_eq!((c.autoencoder, c.generator, c.discriminator), (62593, 19841, 90497));
    assert_eq!(c.snr_instances, 2);
    assert_eq!(c.total, 2 * c.per_snr_instance + c.gate);
}

#[test]
fn identity_denoiser_scores_perfectly() {
    let clean = pairs(6, 1, &[2.0]).remove(0).clean;
    let (cc, tr, sr) = segment_scores(&clean, &clean, &PsdConfig::Periodogram).unwrap();
    assert_eq!((cc, tr, sr), (1.0, 0.0, 0.0));
}

#[test]
fn scores_degrade_monotonically_with_noise() {
    let clean = pairs(7, 1, &[2.0]).remove(0).clean;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noise: Vec<f64> = (0..clean.len()).map(|_| normal.sample(&mut rng)).collect();
    let scores: Vec<(f64, f64, f64)> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|k| {
            let y: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + k * n).collect();
            segment_scores(&y, &clean, &PsdConfig::Periodogram).unwrap()
        })
        .collect();
    for w in scores.windows(2) {
        assert!(w[1].0 < w[0].0 && w[1].1 > w[0].1 && w[1].2 > w[0].2, "{scores:?}");
    }
}

#[test]
fn report_files_are_complete_and_deterministic() {
    let test = pairs(9, 10, &[-7.0, 2.0]);
    let cfg = tiny_config();
    let report = run_benchmark(trained(), &test, &cfg).unwrap();
    assert_eq!(report.segments.len(), 20);
    assert_eq!(report.summaries.len(), 2);
    assert!(report.summaries.iter().all(|s| s.segments == 10 && s.cc.ci_low <= s.cc.ci_high));

    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files = emit_report(&report, a.path()).unwrap();
    assert_eq!(files.len(), 6);
    emit_report(&run_benchmark(trained(), &test, &cfg).unwrap(), b.path()).unwrap();
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name:?}");
    }

    let csv = fs::read_to_string(a.path().join(METRICS_CSV)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("snr_db,segment_id,cc,trrmse,srrmse"));
    assert_eq!(lines.filter(|l| l.starts_with("-7,")).count(), 10);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join(SUMMARY_JSON)).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert!(summary.get("wall_clock").is_none());
}
