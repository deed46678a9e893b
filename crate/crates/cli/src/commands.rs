use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use atat_core::autoencoder::AeLossTrace;
use atat_core::bench::{emit_report, run_benchmark, TimingReport, TIMING_JSON};
use atat_core::config::RunConfig;
use atat_core::corpus::{build_corpus, summarise};
use atat_core::pipeline::{
    pairs_at, save_gate, train_adversarial_stage, train_all, train_autoencoder_stage, train_gate_stage,
    AtatSystem, PhaseTimes, SnrModel, GATE_FILE,
};
use atat_core::signal::{load_dataset, read_csv_segments, save_dataset, write_csv_rows, MixedPair, SegmentKind};
use serde::{Deserialize, Serialize};

use crate::Command;

const CORPUS_INFO: &str = "corpus.json";
const CONFIG_ECHO: &str = "config.json";

/// Written by `generate` next to the dataset splits.
#[derive(Debug, Serialize, Deserialize)]
struct CorpusInfo {
    surrogate: bool,
    train_pairs: usize,
    test_pairs: usize,
    snr_levels: Vec<f64>,
    max_snr_error_db: f64,
}

pub fn run(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Generate => generate(cfg),
        Command::TrainAll => cmd_train_all(cfg),
        Command::TrainAe => train_ae(cfg),
        Command::TrainGan { models } => train_gan(cfg, models),
        Command::TrainGate => train_gate(cfg),
        Command::Denoise { models, input } => denoise(cfg, models, input),
        Command::Eval { models } => eval(cfg, models),
    }
}

/// Creates `<out>/<UTC timestamp>-seed<seed>[-n]` and echoes the config into it.
fn run_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = cfg.out_dir.join(format!("{stamp}-seed{}-{command}", cfg.seed));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.save(dir.join(CONFIG_ECHO))?;
    eprintln!("run directory: {}", dir.display());
    Ok(dir)
}

fn load_split(cfg: &RunConfig, split: &str) -> Result<Vec<MixedPair>> {
    let dir = cfg.data_dir.join(split);
    let dataset = load_dataset(&dir).with_context(|| format!("loading the {split} split from {}", dir.display()))?;
    let pairs = dataset.pairs()?;
    let wanted: Vec<MixedPair> = pairs
        .into_iter()
        .filter(|p| cfg.snr_levels.iter().any(|&l| (l - p.snr_db).abs() < 1e-9))
        .collect();
    if wanted.is_empty() {
        return Err(atat_core::CoreError::InvalidDataset(format!(
            "{} has no pairs at the configured levels {:?}",
            dir.display(),
            cfg.snr_levels
        ))
        .into());
    }
    Ok(wanted)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_ae_trace(dir: &Path, snr: f64, trace: &AeLossTrace) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (i, l) in trace.epoch_means.iter().enumerate() {
        writeln!(text, "{i},{l}").unwrap();
    }
    write_text(&dir.join(format!("ae_loss_snr_{snr}dB.csv")), &text)
}

fn write_timing(dir: &Path, times: &PhaseTimes) -> Result<TimingReport> {
    let report = TimingReport::from_times(times);
    write_text(&dir.join(TIMING_JSON), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(report)
}

fn generate(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.data_dir).with_context(|| format!("creating {}", cfg.data_dir.display()))?;
    cfg.save(cfg.data_dir.join(CONFIG_ECHO))?;
    let corpus = build_corpus(cfg)?;
    save_dataset(&corpus.train, cfg.data_dir.join("train"))?;
    save_dataset(&corpus.test, cfg.data_dir.join("test"))?;
    let s = summarise(&corpus)?;
    let info = CorpusInfo {
        surrogate: corpus.surrogate,
        train_pairs: s.train_pairs,
        test_pairs: s.test_pairs,
        snr_levels: s.snr_levels.clone(),
        max_snr_error_db: s.max_snr_error_db,
    };
    write_text(&cfg.data_dir.join(CORPUS_INFO), &(serde_json::to_string_pretty(&info)? + "\n"))?;
    println!(
        "generated {} train / {} test pairs at {:?} dB in {} ({} sources); max SNR error {:.3e} dB",
        s.train_pairs,
        s.test_pairs,
        s.snr_levels,
        cfg.data_dir.display(),
        if corpus.surrogate { "synthetic surrogate" } else { "external" },
        s.max_snr_error_db
    );
    Ok(())
}

fn cmd_train_all(cfg: &RunConfig) -> Result<()> {
    let dir = run_dir(cfg, "train-all")?;
    let train = load_split(cfg, "train")?;
    let trained = train_all(&train, cfg)?;
    trained.system.save(&dir)?;
    for (snr, trace) in &trained.ae_traces {
        write_ae_trace(&dir, *snr, trace)?;
    }
    for (snr, trace) in &trained.gan_traces {
        trace.write_csv(dir.join(format!("gan_trace_snr_{snr}dB.csv")))?;
    }
    if let Some(trace) = &trained.gate_trace {
        trace.write_csv(dir.join("gate_trace.csv"))?;
    }
    let timing = write_timing(&dir, &trained.times)?;
    let counts = atat_core::bench::count_parameters(&trained.system);
    println!(
        "trained {} SNR model(s) in {:.1} s (pre-processing share {:.1}%), {} parameters in total",
        trained.system.models.len(),
        timing.total_seconds,
        100.0 * timing.preprocessing_fraction,
        counts.total
    );
    println!("checkpoints: {}", dir.display());
    Ok(())
}

fn train_ae(cfg: &RunConfig) -> Result<()> {
    let dir = run_dir(cfg, "train-ae")?;
    let train = load_split(cfg, "train")?;
    let mut times = PhaseTimes::default();
    for &snr in &cfg.snr_levels {
        let pairs = pairs_at(&train, snr);
        let (model, trace) =
            times.time(format!("autoencoder/{snr}"), || train_autoencoder_stage(&pairs, snr, cfg))?;
        model.save(&dir)?;
        write_ae_trace(&dir, snr, &trace)?;
    }
    write_timing(&dir, &times)?;
    println!("autoencoder checkpoints: {}", dir.display());
    Ok(())
}

fn train_gan(cfg: &RunConfig, models: &Path) -> Result<()> {
    let dir = run_dir(cfg, "train-gan")?;
    let train = load_split(cfg, "train")?;
    let mut times = PhaseTimes::default();
    for &snr in &cfg.snr_levels {
        let mut model = SnrModel::load(models, snr)?;
        let pairs = pairs_at(&train, snr);
        let trace = times.time(format!("adversarial/{snr}"), || {
            train_adversarial_stage(&mut model, &pairs, cfg)
        })?;
        model.save(&dir)?;
        trace.write_csv(dir.join(format!("gan_trace_snr_{snr}dB.csv")))?;
    }
    let gate = models.join(GATE_FILE);
    if gate.exists() {
        fs::copy(&gate, dir.join(GATE_FILE)).with_context(|| format!("copying {}", gate.display()))?;
    }
    write_timing(&dir, &times)?;
    println!("adversarial checkpoints: {}", dir.display());
    Ok(())
}

fn train_gate(cfg: &RunConfig) -> Result<()> {
    let dir = run_dir(cfg, "train-gate")?;
    let train = load_split(cfg, "train")?;
    let mut times = PhaseTimes::default();
    let (gate, trace) = times.time("gate", || train_gate_stage(&train, cfg))?;
    save_gate(&gate, &dir)?;
    trace.write_csv(dir.join("gate_trace.csv"))?;
    write_timing(&dir, &times)?;
    println!(
        "gate trained, final training accuracy {:.3}; checkpoint in {}",
        trace.epoch_accuracy.last().copied().unwrap_or(f64::NAN),
        dir.display()
    );
    Ok(())
}

fn denoise(cfg: &RunConfig, models: &Path, input: &Path) -> Result<()> {
    let dir = run_dir(cfg, "denoise")?;
    let system = AtatSystem::load(models, cfg)?;
    let segments = read_csv_segments(input, SegmentKind::Contaminated, "row")?;
    let raw: Vec<Vec<f64>> = segments.into_iter().map(|s| s.into_samples()).collect();
    let out = system.denoise(&raw, cfg.threads)?;
    write_csv_rows(dir.join("denoised.csv"), &out.iter().map(|d| d.output.clone()).collect::<Vec<_>>())?;
    let mut routing = String::from("row,snr_db,masked_fraction,probabilities\n");
    for (i, d) in out.iter().enumerate() {
        let probs: Vec<String> = d.probabilities.iter().map(|p| p.to_string()).collect();
        writeln!(routing, "{i},{},{},{}", d.snr_db, d.mask.masked_fraction(), probs.join(";")).unwrap();
    }
    write_text(&dir.join("routing.csv"), &routing)?;
    println!("denoised {} segment(s) into {}", out.len(), dir.join("denoised.csv").display());
    Ok(())
}

fn eval(cfg: &RunConfig, models: &Path) -> Result<()> {
    let dir = run_dir(cfg, "eval")?;
    let test = load_split(cfg, "test")?;
    let system = AtatSystem::load(models, cfg)?;
    let start = Instant::now();
    let mut report = run_benchmark(&system, &test, cfg)?;
    let info_path = cfg.data_dir.join(CORPUS_INFO);
    report.surrogate_data = fs::read_to_string(&info_path)
        .ok()
        .and_then(|t| serde_json::from_str::<CorpusInfo>(&t).ok())
        .map(|i| i.surrogate);
    report.wall_clock = Some(PhaseTimes {
        phases: vec![("evaluation".into(), start.elapsed().as_secs_f64())],
    });
    emit_report(&report, &dir)?;
    for s in &report.summaries {
        println!(
            "{:>5} dB: CC {:.3} [{:.3}, {:.3}]  tRRMSE {:.3}  sRRMSE {:.3}  (AE only CC {:.3}, input CC {:.3}, gate accuracy {:.2}, n={})",
            s.snr_db,
            s.cc.mean,
            s.cc.ci_low,
            s.cc.ci_high,
            s.trrmse.mean,
            s.srrmse.mean,
            s.ae_only_cc.mean,
            s.contaminated_cc.mean,
            s.gate_accuracy,
            s.segments
        );
    }
    println!("report: {}", dir.display());
    Ok(())
}
