//! Building the semi-synthetic train/test corpora from clean EEG and EMG
//! source pools.
//!
//! EEG segments are split disjointly between train and test; the eligible
//! (high-variance) EMG segments are split the same way, so no source
//! segment appears on both sides. Every SNR level reuses the same EEG
//! segments with independently drawn artifacts.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::seed::stream;
use crate::signal::{
    measured_snr_db, read_csv_segments, select_high_variance, synth, Dataset, MixRecord, Segment,
    SegmentKind,
};

#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Dataset,
    pub test: Dataset,
    /// `true` when the sources are the built-in synthetic surrogates.
    pub surrogate: bool,
}

/// Summary of a generated corpus, printed by `atat generate`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSummary {
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub snr_levels: Vec<f64>,
    pub max_snr_error_db: f64,
}

/// Rounds samples to `f32` so the in-memory corpus equals what a saved
/// dataset loads back.
fn quantise(segments: Vec<Segment>) -> Result<Vec<Segment>> {
    segments
        .into_iter()
        .map(|s| {
            let kind = s.kind();
            let id = s.id().to_string();
            let x = s.into_samples().into_iter().map(|v| v as f32 as f64).collect();
            Segment::new(x, kind, id)
        })
        .collect()
}

fn source_pools(cfg: &RunConfig) -> Result<(Vec<Segment>, Vec<Segment>, bool)> {
    let src = &cfg.data.source;
    match (&src.eeg_csv, &src.emg_csv) {
        (Some(eeg), Some(emg)) => Ok((
            read_csv_segments(eeg, SegmentKind::CleanEEG, "eeg")?,
            read_csv_segments(emg, SegmentKind::EMGArtifact, "emg")?,
            false,
        )),
        _ => {
            let mut rng = stream(cfg.seed, "corpus/surrogate");
            let eeg = synth::eeg_pool(&mut rng, cfg.data.train_pairs + cfg.data.test_pairs, "eeg");
            let emg = synth::emg_pool(&mut rng, src.surrogate_emg_pool, "emg");
            Ok((eeg, emg, true))
        }
    }
}

pub fn build_corpus(cfg: &RunConfig) -> Result<Corpus> {
    cfg.validate()?;
    let (eeg, emg, surrogate) = source_pools(cfg)?;
    let (eeg, emg) = (quantise(eeg)?, quantise(emg)?);
    let (n_train, n_test) = (cfg.data.train_pairs, cfg.data.test_pairs);
    if eeg.len() < n_train + n_test {
        return Err(CoreError::InvalidDataset(format!(
            "{} clean EEG segments, need {} train + {} test",
            eeg.len(),
            n_train,
            n_test
        )));
    }
    let mut eeg_order: Vec<usize> = (0..eeg.len()).collect();
    eeg_order.shuffle(&mut stream(cfg.seed, "corpus/eeg-split"));

    let mut eligible = select_high_variance(&emg, cfg.data.emg_variance_quantile);
    eligible.shuffle(&mut stream(cfg.seed, "corpus/emg-split"));
    let emg_train = (eligible.len() * n_train).div_ceil(n_train + n_test);
    if emg_train == 0 || emg_train >= eligible.len() {
        return Err(CoreError::InvalidDataset(format!(
            "{} eligible EMG segments cannot be split between train and test",
            eligible.len()
        )));
    }

    let split = |name: &str, eeg_idx: &[usize], emg_idx: &[usize]| -> Dataset {
        let mut rng = stream(cfg.seed, &format!("corpus/pairing/{name}"));
        let mut pairing = Vec::new();
        let mut used_emg = Vec::new();
        for &snr in &cfg.snr_levels {
            for &e in eeg_idx {
                let m = emg_idx[rng.random_range(0..emg_idx.len())];
                used_emg.push(m);
                pairing.push(MixRecord {
                    eeg_id: eeg[e].id().to_string(),
                    emg_id: emg[m].id().to_string(),
                    snr_db: snr,
                });
            }
        }
        let mut seen = HashSet::new();
        used_emg.retain(|m| seen.insert(*m));
        let segments = eeg_idx
            .iter()
            .map(|&e| eeg[e].clone())
            .chain(used_emg.iter().map(|&m| emg[m].clone()))
            .collect();
        Dataset { segments, pairing }
    };
    let train = split("train", &eeg_order[..n_train], &eligible[..emg_train]);
    let test = split("test", &eeg_order[n_train..n_train + n_test], &eligible[emg_train..]);
    Ok(Corpus {
        train,
        test,
        surrogate,
    })
}

/// Counts and the worst deviation of measured from requested SNR.
pub fn summarise(corpus: &Corpus) -> Result<CorpusSummary> {
    let mut max_err: f64 = 0.0;
    for ds in [&corpus.train, &corpus.test] {
        for p in ds.pairs()? {
            let noise: Vec<f64> = p.contaminated.iter().zip(&p.clean).map(|(y, x)| y - x).collect();
            max_err = max_err.max((measured_snr_db(&p.clean, &noise)? - p.snr_db).abs());
        }
    }
    Ok(CorpusSummary {
        train_pairs: corpus.train.pairing.len(),
        test_pairs: corpus.test.pairing.len(),
        snr_levels: corpus.train.snr_levels(),
        max_snr_error_db: max_err,
    })
}
