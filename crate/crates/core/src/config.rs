//! Run configuration: every tunable of a run in one JSON document.
//!
//! Missing keys take their defaults, unknown keys are rejected, and
//! serialising a parsed config reproduces it exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::GanConfig;
use crate::autoencoder::AeTrainConfig;
use crate::error::{io_err, CoreError, Result};
use crate::gate::{GateConfig, SnrClassSet};
use crate::mask::MaskConfig;
use crate::metrics::PsdConfig;

/// Where clean EEG and EMG source segments come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// CSV with one 512-sample clean EEG segment per row. When both CSV
    /// paths are absent, a synthetic surrogate corpus is generated instead.
    pub eeg_csv: Option<PathBuf>,
    pub emg_csv: Option<PathBuf>,
    /// Size of the synthetic EMG pool before high-variance selection.
    pub surrogate_emg_pool: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_pairs: usize,
    pub test_pairs: usize,
    /// EMG segments whose variance is at or above this quantile of the pool
    /// are eligible as artifacts.
    pub emg_variance_quantile: f64,
    pub source: SourceConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_pairs: 120,
            test_pairs: 100,
            emg_variance_quantile: 0.75,
            source: SourceConfig {
                eeg_csv: None,
                emg_csv: None,
                surrogate_emg_pool: 1000,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub psd: PsdConfig,
    pub ci_level: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            psd: PsdConfig::Periodogram,
            ci_level: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub snr_levels: Vec<f64>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub skip_gan: bool,
    pub data: DataConfig,
    pub mask: MaskConfig,
    pub autoencoder: AeTrainConfig,
    pub gan: GanConfig,
    pub gate: GateConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            snr_levels: SnrClassSet::default().levels,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            threads: 1,
            skip_gan: false,
            data: DataConfig::default(),
            mask: MaskConfig::default(),
            autoencoder: AeTrainConfig::default(),
            gan: GanConfig::default(),
            gate: GateConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(io_err(path))
    }

    pub fn classes(&self) -> Result<SnrClassSet> {
        SnrClassSet::new(self.snr_levels.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidConfig(m));
        self.classes()?;
        self.gan.validate()?;
        let m = &self.mask;
        if m.window_len < 2 || m.window_len > crate::signal::SEGMENT_LEN || m.stride == 0 {
            return bad(format!("mask window {} / stride {}", m.window_len, m.stride));
        }
        if !(-1.0..=1.0).contains(&m.threshold) {
            return bad(format!("mask threshold {} outside [-1, 1]", m.threshold));
        }
        let d = &self.data;
        if d.train_pairs < 2 || d.test_pairs < 2 {
            return bad(format!("{} train / {} test pairs", d.train_pairs, d.test_pairs));
        }
        if !(0.0..1.0).contains(&d.emg_variance_quantile) {
            return bad(format!("EMG variance quantile {}", d.emg_variance_quantile));
        }
        if d.source.eeg_csv.is_some() != d.source.emg_csv.is_some() {
            return bad("eeg_csv and emg_csv must be given together".into());
        }
        if !(self.eval.ci_level > 0.0 && self.eval.ci_level < 1.0) {
            return bad(format!("CI level {}", self.eval.ci_level));
        }
        for (what, epochs, batch, lr) in [
            ("autoencoder", self.autoencoder.epochs, self.autoencoder.batch, self.autoencoder.lr),
            ("gate", self.gate.epochs, self.gate.batch, self.gate.lr),
        ] {
            if epochs == 0 || batch == 0 || !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{what}: epochs {epochs}, batch {batch}, lr {lr}"));
            }
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }
}
