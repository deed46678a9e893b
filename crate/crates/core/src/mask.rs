//! Autoencoder-targeted masking.
//!
//! Where the autoencoder output stops tracking the contaminated input, the
//! local correlation between the two drops; windows whose CC falls below
//! the threshold mark high-noise target sites for the transformer.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};
use crate::metrics::pearson_cc;
use crate::signal::ensure_finite;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub window_len: usize,
    pub stride: usize,
    pub threshold: f64,
    pub crossfade: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            window_len: 64,
            stride: 32,
            threshold: 0.8,
            crossfade: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub window_len: usize,
    pub stride: usize,
    pub threshold: f64,
    pub cc_per_window: Vec<f64>,
    /// Windows where either stream was constant; their CC is set to 0.
    pub degenerate_windows: Vec<usize>,
    pub signal_len: usize,
}

impl NoiseProfile {
    pub fn window_count(signal_len: usize, window_len: usize, stride: usize) -> usize {
        (signal_len - window_len) / stride + 1
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMask {
    pub mask: Vec<bool>,
    pub profile: NoiseProfile,
}

impl NoiseMask {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.mask.len().max(1) as f64
    }
}

/// Model input: `[contaminated, ae_output]` per position, zeroed where masked.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenStream {
    pub tokens: Vec<[f64; 2]>,
    pub mask: NoiseMask,
}

pub fn windowed_cc(
    original: &[f64],
    ae_output: &[f64],
    window_len: usize,
    stride: usize,
) -> Result<NoiseProfile> {
    if original.len() != ae_output.len() {
        return Err(CoreError::Shape(format!(
            "original has {} samples, ae output {}",
            original.len(),
            ae_output.len()
        )));
    }
    if window_len < 2 || window_len > original.len() || stride == 0 {
        return Err(CoreError::InvalidConfig(format!(
            "window_len {window_len}, stride {stride} for {} samples",
            original.len()
        )));
    }
    ensure_finite(original)?;
    ensure_finite(ae_output)?;
    let count = NoiseProfile::window_count(original.len(), window_len, stride);
    let mut cc = Vec::with_capacity(count);
    let mut degenerate = Vec::new();
    for w in 0..count {
        let r = w * stride..w * stride + window_len;
        match pearson_cc(&original[r.clone()], &ae_output[r]) {
            Ok(v) => cc.push(v),
            Err(CoreError::DegenerateSegment(_)) => {
                degenerate.push(w);
                cc.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(NoiseProfile {
        window_len,
        stride,
        threshold: MaskConfig::default().threshold,
        cc_per_window: cc,
        degenerate_windows: degenerate,
        signal_len: original.len(),
    })
}

pub fn build_mask(profile: &NoiseProfile) -> NoiseMask {
    let mut mask = vec![false; profile.signal_len];
    for (w, &cc) in profile.cc_per_window.iter().enumerate() {
        if cc < profile.threshold {
            let start = w * profile.stride;
            for m in &mut mask[start..start + profile.window_len] {
                *m = true;
            }
        }
    }
    NoiseMask {
        mask,
        profile: profile.clone(),
    }
}

pub fn tokenize(original_norm: &[f64], ae_output: &[f64], mask: &NoiseMask) -> Result<TokenStream> {
    if original_norm.len() != ae_output.len() || mask.mask.len() != ae_output.len() {
        return Err(CoreError::Shape(format!(
            "tokenize lengths {}, {}, mask {}",
            original_norm.len(),
            ae_output.len(),
            mask.mask.len()
        )));
    }
    let tokens = original_norm
        .iter()
        .zip(ae_output)
        .zip(&mask.mask)
        .map(|((&o, &a), &m)| if m { [0.0, 0.0] } else { [o, a] })
        .collect();
    Ok(TokenStream {
        tokens,
        mask: mask.clone(),
    })
}

/// Weight given to the transformer output at each position.
///
/// Zero outside the mask; inside it ramps linearly as `d / (crossfade + 1)`
/// with `d` the distance to the nearest unmasked sample, reaching 1 after
/// `crossfade` samples. A mask without unmasked samples gives all ones.
pub fn splice_weights(mask: &[bool], crossfade: usize) -> Vec<f64> {
    let n = mask.len();
    let mut dist = vec![usize::MAX; n];
    let mut last: Option<usize> = None;
    for i in 0..n {
        if !mask[i] {
            last = Some(i);
            dist[i] = 0;
        } else if let Some(l) = last {
            dist[i] = i - l;
        }
    }
    last = None;
    for i in (0..n).rev() {
        if !mask[i] {
            last = Some(i);
        } else if let Some(l) = last {
            dist[i] = dist[i].min(l - i);
        }
    }
    let denom = (crossfade + 1) as f64;
    dist.into_iter()
        .map(|d| match d {
            0 => 0.0,
            usize::MAX => 1.0,
            d => (d as f64 / denom).min(1.0),
        })
        .collect()
}

pub fn splice(
    ae_output: &[f64],
    transformer_output: &[f64],
    mask: &NoiseMask,
    crossfade: usize,
) -> Result<Vec<f64>> {
    if ae_output.len() != transformer_output.len() || mask.mask.len() != ae_output.len() {
        return Err(CoreError::Shape(format!(
            "splice lengths {}, {}, mask {}",
            ae_output.len(),
            transformer_output.len(),
            mask.mask.len()
        )));
    }
    let w = splice_weights(&mask.mask, crossfade);
    let out: Vec<f64> = ae_output
        .iter()
        .zip(transformer_output)
        .zip(&w)
        .map(|((&a, &t), &w)| {
            if w == 0.0 {
                a
            } else if w == 1.0 {
                t
            } else {
                w * t + (1.0 - w) * a
            }
        })
        .collect();
    ensure_finite(&out)?;
    Ok(out)
}

pub fn write_profile_csv(path: impl AsRef<Path>, profile: &NoiseProfile) -> Result<()> {
    let mut text = String::from("index,cc\n");
    for (i, cc) in profile.cc_per_window.iter().enumerate() {
        text.push_str(&format!("{i},{cc}\n"));
    }
    write_text(path.as_ref(), &text)
}

pub fn write_mask_csv(path: impl AsRef<Path>, mask: &NoiseMask) -> Result<()> {
    let mut text = String::from("index,flag\n");
    for (i, &m) in mask.mask.iter().enumerate() {
        text.push_str(&format!("{i},{}\n", m as u8));
    }
    write_text(path.as_ref(), &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Vec<f64> {
        (0..512).map(|i| ((i * 37) % 101) as f64).collect()
    }

    #[test]
    fn self_and_anti_correlation() {
        let x = ramp();
        let p = windowed_cc(&x, &x, 64, 32).unwrap();
        assert_eq!(p.cc_per_window.len(), 15);
        assert!(p.cc_per_window.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        assert_eq!(build_mask(&p).masked_count(), 0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let p = windowed_cc(&x, &neg, 64, 32).unwrap();
        assert!(p.cc_per_window.iter().all(|&c| (c + 1.0).abs() < 1e-12));
    }

    #[test]
    fn flat_window_counts_as_noise() {
        let x = ramp();
        let mut y = x.clone();
        for v in &mut y[0..64] {
            *v = 3.0;
        }
        let p = windowed_cc(&x, &y, 64, 32).unwrap();
        assert_eq!(p.degenerate_windows, vec![0]);
        assert_eq!(p.cc_per_window[0], 0.0);
    }

    #[test]
    fn bad_geometry_rejected() {
        let x = ramp();
        assert!(matches!(windowed_cc(&x, &x, 513, 32), Err(CoreError::InvalidConfig(_))));
        assert!(matches!(windowed_cc(&x, &x, 64, 0), Err(CoreError::InvalidConfig(_))));
    }

    #[test]
    fn ramp_weights() {
        let mut m = vec![false; 40];
        for v in &mut m[10..30] {
            *v = true;
        }
        let w = splice_weights(&m, 3);
        assert_eq!(w[9], 0.0);
        assert_eq!(w[10], 0.25);
        assert_eq!(w[12], 0.75);
        assert_eq!(w[13], 1.0);
        assert_eq!(w[29], 0.25);
        assert_eq!(w[30], 0.0);
        assert!(splice_weights(&[true; 5], 8).iter().all(|&v| v == 1.0));
    }
}
