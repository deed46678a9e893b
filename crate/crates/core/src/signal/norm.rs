use serde::{Deserialize, Serialize};

use super::ensure_finite;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    ZScore,
    MinMax01,
}

/// Affine map `x' = (x - offset) / scale` recorded so it can be undone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub mode: NormMode,
    pub offset: f64,
    pub scale: f64,
}

pub fn normalize(samples: &[f64], mode: NormMode) -> Result<(Vec<f64>, NormState)> {
    if samples.is_empty() {
        return Err(CoreError::InvalidInput("cannot normalize an empty vector".into()));
    }
    ensure_finite(samples)?;
    let (offset, scale) = match mode {
        NormMode::MinMax01 => {
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi - lo)
        }
        NormMode::ZScore => {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        }
    };
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(CoreError::DegenerateSegment(
            "segment has zero spread and cannot be normalized".into(),
        ));
    }
    let state = NormState { mode, offset, scale };
    Ok((apply(samples, &state), state))
}

/// Applies an existing state, e.g. the contaminated signal's statistics to its clean target.
pub fn normalize_with(samples: &[f64], state: &NormState) -> Vec<f64> {
    apply(samples, state)
}

fn apply(samples: &[f64], state: &NormState) -> Vec<f64> {
    // For MinMax01 the result stays inside [0, 1]: IEEE subtraction and
    // division are monotone, so `(v - min) / (max - min)` cannot overshoot.
    samples
        .iter()
        .map(|v| (v - state.offset) / state.scale)
        .collect()
}

pub fn denormalize(samples: &[f64], state: &NormState) -> Vec<f64> {
    samples.iter().map(|v| v * state.scale + state.offset).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmax_examples() {
        let (y, s) = normalize(&[0.0, 1.0], NormMode::MinMax01).unwrap();
        assert_eq!(y, vec![0.0, 1.0]);
        assert_eq!((s.offset, s.scale), (0.0, 1.0));
        let (y, _) = normalize(&[2.0, 4.0, 6.0], NormMode::MinMax01).unwrap();
        assert_eq!(y, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_segment_rejected() {
        for mode in [NormMode::MinMax01, NormMode::ZScore] {
            assert!(matches!(
                normalize(&[1.0, 1.0, 1.0], mode),
                Err(CoreError::DegenerateSegment(_))
            ));
        }
    }
}
