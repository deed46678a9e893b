//! Benchmark harness: per-segment metrics through the full pipeline,
//! aggregates with confidence intervals, parameter accounting and report
//! emission (CSV, JSON summary, SVG plots).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{io_err, CoreError, Result};
use crate::metrics::{confidence_interval, pearson_cc, srrmse, trrmse, PsdConfig};
use crate::pipeline::{AtatSystem, PhaseTimes};
use crate::signal::MixedPair;

/// Segments with at least this masked fraction count as masked-heavy.
pub const HEAVY_MASK_FRACTION: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentMetrics {
    pub snr_db: f64,
    pub segment_id: String,
    pub cc: f64,
    pub trrmse: f64,
    pub srrmse: f64,
    pub routed_snr_db: f64,
    pub masked_fraction: f64,
    pub ae_only_cc: f64,
    pub contaminated_cc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Aggregate {
    pub fn of(values: &[f64], level: f64) -> Result<Self> {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        let (ci_low, ci_high) = confidence_interval(values, level)?;
        Ok(Self {
            mean,
            ci_low,
            ci_high,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnrSummary {
    pub snr_db: f64,
    pub segments: usize,
    pub cc: Aggregate,
    pub trrmse: Aggregate,
    pub srrmse: Aggregate,
    pub ae_only_cc: Aggregate,
    pub contaminated_cc: Aggregate,
    pub gate_accuracy: f64,
    pub mean_masked_fraction: f64,
    pub masked_heavy_segments: usize,
    /// Mean CC over masked-heavy segments; absent when there are none.
    pub masked_heavy_cc: Option<f64>,
    pub masked_heavy_ae_only_cc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ParamCounts {
    pub autoencoder: usize,
    pub generator: usize,
    pub discriminator: usize,
    pub gate: usize,
    /// One SNR instance: autoencoder + generator + discriminator.
    pub per_snr_instance: usize,
    pub snr_instances: usize,
    /// All stored parameters: every instance plus the gate.
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub surrogate_data: Option<bool>,
    pub param_counts: ParamCounts,
    pub summaries: Vec<SnrSummary>,
    pub segments: Vec<SegmentMetrics>,
    /// Timing is machine-dependent, so it is kept out of the deterministic
    /// report files and written to `timing.json` instead.
    #[serde(skip)]
    pub wall_clock: Option<PhaseTimes>,
    pub config: RunConfig,
}

pub fn count_parameters(system: &AtatSystem) -> ParamCounts {
    let mut c = ParamCounts::default();
    if let Some(m) = system.models.first() {
        c.autoencoder = m.autoencoder.num_parameters();
        if let Some(adv) = &m.adversarial {
            c.generator = adv.generator.num_parameters();
            c.discriminator = adv.discriminator.num_parameters();
        }
    }
    c.gate = system.gate.as_ref().map_or(0, |g| g.num_parameters());
    c.per_snr_instance = c.autoencoder + c.generator + c.discriminator;
    c.snr_instances = system.models.len();
    c.total = system.models.iter().map(|m| m.num_parameters()).sum::<usize>() + c.gate;
    c
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Metrics of one reconstruction against its ground truth.
pub fn segment_scores(denoised: &[f64], clean: &[f64], psd: &PsdConfig) -> Result<(f64, f64, f64)> {
    Ok((pearson_cc(denoised, clean)?, trrmse(denoised, clean)?, srrmse(denoised, clean, psd)?))
}

fn cc_or_zero(a: &[f64], b: &[f64]) -> Result<f64> {
    match pearson_cc(a, b) {
        Ok(v) => Ok(v),
        Err(CoreError::DegenerateSegment(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Runs every test pair through the full pipeline and scores it.
pub fn run_benchmark(system: &AtatSystem, test: &[MixedPair], cfg: &RunConfig) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(CoreError::InvalidDataset("empty test set".into()));
    }
    let raw: Vec<Vec<f64>> = test.iter().map(|p| p.contaminated.clone()).collect();
    let outputs = system.denoise(&raw, cfg.threads)?;
    let mut segments = Vec::with_capacity(test.len());
    for (pair, d) in test.iter().zip(&outputs) {
        let (cc, tr, sr) = segment_scores(&d.output, &pair.clean, &cfg.eval.psd)?;
        segments.push(SegmentMetrics {
            snr_db: pair.snr_db,
            segment_id: pair.id.clone(),
            cc,
            trrmse: tr,
            srrmse: sr,
            routed_snr_db: d.snr_db,
            masked_fraction: d.mask.masked_fraction(),
            ae_only_cc: cc_or_zero(&d.ae_only, &pair.clean)?,
            contaminated_cc: cc_or_zero(&pair.contaminated, &pair.clean)?,
        });
    }
    let mut levels: Vec<f64> = test.iter().map(|p| p.snr_db).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let level = cfg.eval.ci_level;
    let summaries = levels
        .iter()
        .map(|&snr| {
            let rows: Vec<&SegmentMetrics> = segments.iter().filter(|s| s.snr_db == snr).collect();
            let col = |f: fn(&SegmentMetrics) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let heavy: Vec<&&SegmentMetrics> =
                rows.iter().filter(|r| r.masked_fraction >= HEAVY_MASK_FRACTION).collect();
            let heavy_mean = |f: fn(&SegmentMetrics) -> f64| {
                (!heavy.is_empty()).then(|| mean_of(&heavy.iter().map(|r| f(r)).collect::<Vec<_>>()))
            };
            Ok(SnrSummary {
                snr_db: snr,
                segments: rows.len(),
                cc: Aggregate::of(&col(|r| r.cc), level)?,
                trrmse: Aggregate::of(&col(|r| r.trrmse), level)?,
                srrmse: Aggregate::of(&col(|r| r.srrmse), level)?,
                ae_only_cc: Aggregate::of(&col(|r| r.ae_only_cc), level)?,
                contaminated_cc: Aggregate::of(&col(|r| r.contaminated_cc), level)?,
                gate_accuracy: mean_of(&col(|r| (r.routed_snr_db == r.snr_db) as u8 as f64)),
                mean_masked_fraction: mean_of(&col(|r| r.masked_fraction)),
                masked_heavy_segments: heavy.len(),
                masked_heavy_cc: heavy_mean(|r| r.cc),
                masked_heavy_ae_only_cc: heavy_mean(|r| r.ae_only_cc),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        seed: cfg.seed,
        surrogate_data: None,
        param_counts: count_parameters(system),
        summaries,
        segments,
        wall_clock: None,
        config: cfg.clone(),
    })
}

pub const METRICS_CSV: &str = "metrics.csv";
pub const TABLE_CSV: &str = "table.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TIMING_JSON: &str = "timing.json";

/// Timing summary written next to a report.
#[derive(Clone, Debug, Serialize)]
pub struct TimingReport {
    pub phases: Vec<(String, f64)>,
    pub total_seconds: f64,
    /// Gate training share of the total, the pre-processing phase.
    pub preprocessing_fraction: f64,
}

impl TimingReport {
    pub fn from_times(times: &PhaseTimes) -> Self {
        let total = times.total();
        Self {
            phases: times.phases.clone(),
            total_seconds: total,
            preprocessing_fraction: if total > 0.0 { times.share("gate") / total } else { 0.0 },
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes `metrics.csv`, `table.csv`, `summary.json`, one SVG per metric and,
/// if present, `timing.json` into `dir`. Returns the written paths.
pub fn emit_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let mut csv = String::from("snr_db,segment_id,cc,trrmse,srrmse\n");
    for s in &report.segments {
        writeln!(csv, "{},{},{},{},{}", s.snr_db, s.segment_id, s.cc, s.trrmse, s.srrmse).unwrap();
    }
    let path = dir.join(METRICS_CSV);
    write(&path, &csv)?;
    written.push(path);

    let mut table = String::from(
        "model,snr_db,cc_mean,cc_ci_low,cc_ci_high,trrmse_mean,srrmse_mean,parameters,reference_cc,reference_trrmse,reference_srrmse\n",
    );
    for s in &report.summaries {
        writeln!(
            table,
            "AT-AT,{},{},{},{},{},{},{},,,",
            s.snr_db,
            s.cc.mean,
            s.cc.ci_low,
            s.cc.ci_high,
            s.trrmse.mean,
            s.srrmse.mean,
            report.param_counts.total
        )
        .unwrap();
        writeln!(
            table,
            "autoencoder only,{},{},{},{},,,{},,,",
            s.snr_db, s.ae_only_cc.mean, s.ae_only_cc.ci_low, s.ae_only_cc.ci_high, report.param_counts.autoencoder
        )
        .unwrap();
        writeln!(
            table,
            "contaminated input,{},{},{},{},,,0,,,",
            s.snr_db, s.contaminated_cc.mean, s.contaminated_cc.ci_low, s.contaminated_cc.ci_high
        )
        .unwrap();
    }
    let path = dir.join(TABLE_CSV);
    write(&path, &table)?;
    written.push(path);

    let json = serde_json::to_string_pretty(report).map_err(|e| CoreError::Format(e.to_string()))?;
    let path = dir.join(SUMMARY_JSON);
    write(&path, &(json + "\n"))?;
    written.push(path);

    for (name, pick) in [
        ("cc", (|s: &SnrSummary| s.cc) as fn(&SnrSummary) -> Aggregate),
        ("trrmse", |s| s.trrmse),
        ("srrmse", |s| s.srrmse),
    ] {
        let bars: Vec<(String, Aggregate)> =
            report.summaries.iter().map(|s| (format!("{} dB", s.snr_db), pick(s))).collect();
        let path = dir.join(format!("{name}_by_snr.svg"));
        write(&path, &bar_chart_svg(&format!("mean {name} by SNR (95% CI)"), &bars))?;
        written.push(path);
    }

    if let Some(times) = &report.wall_clock {
        let json = serde_json::to_string_pretty(&TimingReport::from_times(times))
            .map_err(|e| CoreError::Format(e.to_string()))?;
        let path = dir.join(TIMING_JSON);
        write(&path, &(json + "\n"))?;
        written.push(path);
    }
    Ok(written)
}

/// A minimal bar chart with confidence-interval whiskers.
pub fn bar_chart_svg(title: &str, bars: &[(String, Aggregate)]) -> String {
    let (w, h, margin) = (480.0, 320.0, 48.0);
    let top = bars
        .iter()
        .map(|(_, a)| a.ci_high.max(a.mean))
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.1;
    let plot_h = h - 2.0 * margin;
    let y = |v: f64| h - margin - (v.max(0.0) / top) * plot_h;
    let slot = (w - 2.0 * margin) / bars.len().max(1) as f64;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title)).unwrap();
    writeln!(
        svg,
        r#"<line x1="{margin}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - margin,
        w - margin,
        h - margin
    )
    .unwrap();
    writeln!(svg, r#"<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{}" stroke="black"/>"#, h - margin).unwrap();
    for tick in 0..=4 {
        let v = top * tick as f64 / 4.0;
        writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#,
            margin - 4.0,
            y(v) + 4.0
        )
        .unwrap();
    }
    for (i, (label, a)) in bars.iter().enumerate() {
        let cx = margin + slot * (i as f64 + 0.5);
        let bw = slot * 0.5;
        writeln!(
            svg,
            r##"<rect x="{}" y="{}" width="{bw}" height="{}" fill="#4e79a7"/>"##,
            cx - bw / 2.0,
            y(a.mean),
            (h - margin - y(a.mean)).max(0.0)
        )
        .unwrap();
        writeln!(
            svg,
            r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#,
            y(a.ci_low),
            y(a.ci_high)
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#,
            h - margin + 16.0,
            escape(label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
