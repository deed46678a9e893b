use serde::{Deserialize, Serialize};

use super::norm::{normalize, NormMode, NormState};
use super::{rms, Segment, SegmentKind};
use crate::error::{CoreError, Result};

/// SNR levels supported by the contamination protocol, inclusive.
pub const SNR_RANGE_DB: (f64, f64) = (-7.0, 2.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub snr_db: f64,
    pub lambda: f64,
    pub eeg_id: String,
    pub emg_id: String,
    pub seed: u64,
}

/// Scales `emg` so that `10·log10(rms(eeg) / rms(λ·emg)) == snr_db` and adds it.
///
/// Returns the raw (unnormalised) mixture and `λ`.
pub fn mix_raw(eeg: &[f64], emg: &[f64], snr_db: f64) -> Result<(Vec<f64>, f64)> {
    if eeg.len() != emg.len() {
        return Err(CoreError::Shape(format!(
            "eeg has {} samples, emg {}",
            eeg.len(),
            emg.len()
        )));
    }
    if !snr_db.is_finite() {
        return Err(CoreError::InvalidInput(format!("snr_db {snr_db}")));
    }
    let rx = rms(eeg)?;
    let rn = rms(emg)?;
    if rn == 0.0 {
        return Err(CoreError::DegenerateNoise("EMG segment has zero rms".into()));
    }
    let lambda = rx / (rn * 10f64.powf(snr_db / 10.0));
    let y = eeg.iter().zip(emg).map(|(x, n)| x + lambda * n).collect();
    Ok((y, lambda))
}

pub fn measured_snr_db(clean: &[f64], scaled_noise: &[f64]) -> Result<f64> {
    Ok(10.0 * (rms(clean)? / rms(scaled_noise)?).log10())
}

pub fn mix(
    eeg: &Segment,
    emg: &Segment,
    snr_db: f64,
    norm_mode: NormMode,
) -> Result<(Segment, MixSpec, NormState)> {
    if eeg.kind() != SegmentKind::CleanEEG {
        return Err(CoreError::InvalidInput(format!(
            "segment `{}` is {:?}, expected CleanEEG",
            eeg.id(),
            eeg.kind()
        )));
    }
    if emg.kind() != SegmentKind::EMGArtifact {
        return Err(CoreError::InvalidInput(format!(
            "segment `{}` is {:?}, expected EMGArtifact",
            emg.id(),
            emg.kind()
        )));
    }
    let (y, lambda) = mix_raw(eeg.samples(), emg.samples(), snr_db)?;
    let (y, state) = normalize(&y, norm_mode)?;
    let id = format!("{}+{}@{}dB", eeg.id(), emg.id(), snr_db);
    let spec = MixSpec {
        snr_db,
        lambda,
        eeg_id: eeg.id().to_string(),
        emg_id: emg.id().to_string(),
        seed: 0,
    };
    Ok((Segment::new(y, SegmentKind::Contaminated, id)?, spec, state))
}

/// Indices of the segments whose variance lies in the top `1 - quantile`
/// share of the pool (quantile 0.75 keeps the top quartile), in pool order.
pub fn select_high_variance(pool: &[Segment], quantile: f64) -> Vec<usize> {
    if pool.is_empty() {
        return Vec::new();
    }
    let var = |s: &Segment| {
        let x = s.samples();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
    };
    let vars: Vec<f64> = pool.iter().map(var).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| vars[b].total_cmp(&vars[a]).then(a.cmp(&b)));
    let keep = ((pool.len() as f64) * (1.0 - quantile.clamp(0.0, 1.0))).ceil() as usize;
    let mut chosen: Vec<usize> = order.into_iter().take(keep.max(1)).collect();
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(kind: SegmentKind, scale: f64) -> Segment {
        let x = (0..512).map(|i| if i % 2 == 0 { scale } else { -scale }).collect();
        Segment::new(x, kind, "u").unwrap()
    }

    #[test]
    fn lambda_examples() {
        let x = unit(SegmentKind::CleanEEG, 1.0);
        let n1 = unit(SegmentKind::EMGArtifact, 1.0);
        let n2 = unit(SegmentKind::EMGArtifact, 2.0);
        let (_, s, _) = mix(&x, &n1, 0.0, NormMode::ZScore).unwrap();
        assert!((s.lambda - 1.0).abs() < 1e-15);
        let (_, s, _) = mix(&x, &n2, 2.0, NormMode::ZScore).unwrap();
        assert!((s.lambda - 1.0 / (2.0 * 10f64.powf(0.2))).abs() < 1e-12);
        assert!((s.lambda - 0.315479).abs() < 1e-6);
        let (_, s, _) = mix(&x, &n1, -7.0, NormMode::ZScore).unwrap();
        assert!((s.lambda - 5.011872).abs() < 1e-6);
    }

    #[test]
    fn kind_mismatch_and_zero_noise() {
        let x = unit(SegmentKind::CleanEEG, 1.0);
        assert!(matches!(mix(&x, &x, 0.0, NormMode::ZScore), Err(CoreError::InvalidInput(_))));
        let z = Segment::new(vec![0.0; 512], SegmentKind::EMGArtifact, "z").unwrap();
        assert!(matches!(mix(&x, &z, 0.0, NormMode::ZScore), Err(CoreError::DegenerateNoise(_))));
    }

    #[test]
    fn high_variance_keeps_top_quartile() {
        let pool: Vec<Segment> = (1..=8)
            .map(|k| unit(SegmentKind::EMGArtifact, k as f64))
            .collect();
        assert_eq!(select_high_variance(&pool, 0.75), vec![6, 7]);
    }
}
