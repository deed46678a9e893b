//! Domain signal types, contamination, normalisation and dataset storage.

mod dataset;
mod mix;
mod norm;
pub mod synth;

pub use dataset::{
    load_dataset, read_csv_segments, save_dataset, Dataset, DatasetManifest, ManifestEntry,
    MixRecord, MixedPair, MANIFEST_FILE, MANIFEST_VERSION, write_csv_rows,
};
pub use mix::{measured_snr_db, mix, mix_raw, select_high_variance, MixSpec, SNR_RANGE_DB};
pub use norm::{denormalize, normalize, normalize_with, NormMode, NormState};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const SEGMENT_LEN: usize = 512;
pub const SAMPLE_RATE_HZ: f64 = 256.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    CleanEEG,
    EMGArtifact,
    Contaminated,
    Denoised,
}

/// A 2 s, 256 Hz single-channel recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    samples: Vec<f64>,
    kind: SegmentKind,
    id: String,
}

impl Segment {
    pub fn new(samples: Vec<f64>, kind: SegmentKind, id: impl Into<String>) -> Result<Self> {
        if samples.len() != SEGMENT_LEN {
            return Err(CoreError::Shape(format!(
                "segment must have {SEGMENT_LEN} samples, got {}",
                samples.len()
            )));
        }
        ensure_finite(&samples)?;
        Ok(Self {
            samples,
            kind,
            id: id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn kind(&self) -> SegmentKind {
        self.kind
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rate_hz(&self) -> f64 {
        SAMPLE_RATE_HZ
    }
}

pub(crate) fn ensure_finite(samples: &[f64]) -> Result<()> {
    match samples.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(CoreError::InvalidInput(format!(
            "non-finite sample {} at index {i}",
            samples[i]
        ))),
        None => Ok(()),
    }
}

pub fn rms(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CoreError::InvalidInput("rms of an empty vector".into()));
    }
    ensure_finite(samples)?;
    let sq: f64 = samples.iter().map(|v| v * v).sum();
    Ok((sq / samples.len() as f64).sqrt())
}
