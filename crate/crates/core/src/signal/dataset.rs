//! On-disk datasets: a JSON manifest next to raw little-endian `f32` blobs.
//!
//! Only source pools (clean EEG and EMG) are stored; contaminated mixtures
//! are recomputed from the manifest's pairing records, which keeps the
//! mixture exactly reproducible and the files small.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mix::mix_raw;
use super::{Segment, SegmentKind, SEGMENT_LEN};
use crate::error::{io_err, CoreError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: SegmentKind,
    pub count: usize,
    pub byte_order: String,
    pub element_type: String,
    pub ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixRecord {
    pub eeg_id: String,
    pub emg_id: String,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
    pub pairing: Vec<MixRecord>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub segments: Vec<Segment>,
    pub pairing: Vec<MixRecord>,
}

/// A contaminated mixture together with its ground truth, both unnormalised.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedPair {
    pub id: String,
    pub snr_db: f64,
    pub lambda: f64,
    pub clean: Vec<f64>,
    pub contaminated: Vec<f64>,
}

impl Dataset {
    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id() == id)
    }

    /// Distinct SNR levels of the pairing records, ascending.
    pub fn snr_levels(&self) -> Vec<f64> {
        let mut levels: Vec<f64> = self.pairing.iter().map(|r| r.snr_db).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        levels
    }

    /// Materialises every pairing record, in manifest order.
    pub fn pairs(&self) -> Result<Vec<MixedPair>> {
        let index: HashMap<&str, &Segment> = self.segments.iter().map(|s| (s.id(), s)).collect();
        self.pairing
            .iter()
            .map(|r| {
                let eeg = lookup(&index, &r.eeg_id, SegmentKind::CleanEEG)?;
                let emg = lookup(&index, &r.emg_id, SegmentKind::EMGArtifact)?;
                let (y, lambda) = mix_raw(eeg.samples(), emg.samples(), r.snr_db)?;
                Ok(MixedPair {
                    id: format!("{}+{}", r.eeg_id, r.emg_id),
                    snr_db: r.snr_db,
                    lambda,
                    clean: eeg.samples().to_vec(),
                    contaminated: y,
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut index: HashMap<&str, &Segment> = HashMap::new();
        for s in &self.segments {
            if index.insert(s.id(), s).is_some() {
                return Err(CoreError::Format(format!("duplicate segment id `{}`", s.id())));
            }
        }
        for r in &self.pairing {
            lookup(&index, &r.eeg_id, SegmentKind::CleanEEG)?;
            lookup(&index, &r.emg_id, SegmentKind::EMGArtifact)?;
        }
        Ok(())
    }
}

fn lookup<'a>(
    index: &HashMap<&str, &'a Segment>,
    id: &str,
    kind: SegmentKind,
) -> Result<&'a Segment> {
    match index.get(id) {
        Some(s) if s.kind() == kind => Ok(s),
        Some(s) => Err(CoreError::Format(format!(
            "pairing references `{id}` as {kind:?} but it is {:?}",
            s.kind()
        ))),
        None => Err(CoreError::Format(format!("pairing references unknown segment `{id}`"))),
    }
}

fn blob_name(kind: SegmentKind) -> &'static str {
    match kind {
        SegmentKind::CleanEEG => "clean_eeg.f32",
        SegmentKind::EMGArtifact => "emg_artifact.f32",
        SegmentKind::Contaminated => "contaminated.f32",
        SegmentKind::Denoised => "denoised.f32",
    }
}

/// Writes blobs and `manifest.json` into `dir`, returning the manifest path.
///
/// Samples are stored as `f32`; values already representable in `f32`
/// round-trip bit-exactly.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut groups: BTreeMap<&'static str, (SegmentKind, Vec<&Segment>)> = BTreeMap::new();
    for s in &dataset.segments {
        groups
            .entry(blob_name(s.kind()))
            .or_insert_with(|| (s.kind(), Vec::new()))
            .1
            .push(s);
    }
    let mut entries = Vec::new();
    for (file, (kind, segs)) in groups {
        let path = dir.join(file);
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(f);
        for s in &segs {
            for &v in s.samples() {
                w.write_all(&(v as f32).to_le_bytes()).map_err(io_err(&path))?;
            }
        }
        w.flush().map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            file: file.to_string(),
            kind,
            count: segs.len(),
            byte_order: "little".into(),
            element_type: "f32".into(),
            ids: segs.iter().map(|s| s.id().to_string()).collect(),
        });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        entries,
        pairing: dataset.pairing.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::Format(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

/// Loads a dataset from a manifest file or from a directory containing one.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let mut path = manifest_path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(CoreError::Format(format!(
            "{}: unsupported format_version {}",
            path.display(),
            manifest.format_version
        )));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut segments = Vec::new();
    for e in &manifest.entries {
        if e.byte_order != "little" || e.element_type != "f32" {
            return Err(CoreError::Format(format!(
                "{}: unsupported encoding {} {}",
                e.file, e.byte_order, e.element_type
            )));
        }
        if e.ids.len() != e.count {
            return Err(CoreError::Format(format!(
                "{}: count {} but {} ids",
                e.file,
                e.count,
                e.ids.len()
            )));
        }
        let blob_path = dir.join(&e.file);
        let bytes = fs::read(&blob_path).map_err(io_err(&blob_path))?;
        let expected = e.count * SEGMENT_LEN * 4;
        if bytes.len() != expected {
            return Err(CoreError::Format(format!(
                "{}: {} bytes, expected {expected} for {} segments",
                blob_path.display(),
                bytes.len(),
                e.count
            )));
        }
        for (id, chunk) in e.ids.iter().zip(bytes.chunks_exact(SEGMENT_LEN * 4)) {
            let samples = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            segments.push(Segment::new(samples, e.kind, id.clone())?);
        }
    }
    let dataset = Dataset {
        segments,
        pairing: manifest.pairing,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Parses a headerless CSV with one 512-sample segment per row.
pub fn read_csv_segments(
    path: impl AsRef<Path>,
    kind: SegmentKind,
    id_prefix: &str,
) -> Result<Vec<Segment>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(f));
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
        if record.len() != SEGMENT_LEN {
            return Err(CoreError::Shape(format!(
                "{} row {}: {} values, expected {SEGMENT_LEN}",
                path.display(),
                row + 1,
                record.len()
            )));
        }
        let samples = record
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|e| {
                    CoreError::Format(format!("{} row {}: `{v}`: {e}", path.display(), row + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(Segment::new(samples, kind, format!("{id_prefix}{row}"))?);
    }
    Ok(out)
}

/// Writes rows of samples as headerless CSV.
pub fn write_csv_rows(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(f));
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io_err(path))
}
