//! Reconstruction quality metrics: Pearson CC, temporal and spectral
//! relative RMS error, and Student-t confidence intervals.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CoreError, Result};
use crate::signal::{ensure_finite, SAMPLE_RATE_HZ};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    ensure_finite(a)?;
    ensure_finite(b)
}

pub fn pearson_cc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    if a.len() < 2 {
        return Err(CoreError::InvalidInput("correlation needs at least 2 samples".into()));
    }
    let constant = |x: &[f64]| x.iter().all(|v| *v == x[0]);
    if constant(a) || constant(b) {
        return Err(CoreError::DegenerateSegment("correlation with a constant signal".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(CoreError::DegenerateSegment("correlation with a constant signal".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn rms_of(x: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for v in x {
        s += v * v;
        n += 1;
    }
    (s / n.max(1) as f64).sqrt()
}

pub fn trrmse(denoised: &[f64], clean: &[f64]) -> Result<f64> {
    check_pair(denoised, clean)?;
    let rc = rms_of(clean.iter().copied());
    if rc == 0.0 {
        return Err(CoreError::DegenerateSegment("clean reference has zero rms".into()));
    }
    Ok(rms_of(denoised.iter().zip(clean).map(|(d, c)| d - c)) / rc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PsdConfig {
    /// One Hamming-windowed periodogram over the whole segment.
    Periodogram,
    /// Average of Hamming-windowed periodograms over overlapping sub-segments.
    Welch { segment_len: usize, overlap: usize },
}

impl Default for PsdConfig {
    fn default() -> Self {
        PsdConfig::Periodogram
    }
}

/// Symmetric Hamming window `0.54 - 0.46·cos(2πn/(N-1))`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

fn periodogram(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let w = hamming(n);
    let norm: f64 = w.iter().map(|v| v * v).sum::<f64>() * SAMPLE_RATE_HZ;
    let mut buf: Vec<Complex<f64>> = x.iter().zip(&w).map(|(v, w)| Complex::new(v * w, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let bins = n / 2 + 1;
    (0..bins)
        .map(|k| {
            let p = buf[k].norm_sqr() / norm;
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            if edge {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// One-sided power spectral density.
pub fn psd(x: &[f64], cfg: &PsdConfig) -> Result<Vec<f64>> {
    ensure_finite(x)?;
    if x.len() < 2 {
        return Err(CoreError::InvalidInput("spectrum needs at least 2 samples".into()));
    }
    let mut planner = FftPlanner::new();
    match *cfg {
        PsdConfig::Periodogram => Ok(periodogram(x, &mut planner)),
        PsdConfig::Welch { segment_len, overlap } => {
            if segment_len < 2 || segment_len > x.len() || overlap >= segment_len {
                return Err(CoreError::InvalidConfig(format!(
                    "welch segment_len {segment_len}, overlap {overlap} for {} samples",
                    x.len()
                )));
            }
            let step = segment_len - overlap;
            let mut acc = vec![0.0; segment_len / 2 + 1];
            let mut count = 0usize;
            let mut start = 0;
            while start + segment_len <= x.len() {
                for (a, p) in acc.iter_mut().zip(periodogram(&x[start..start + segment_len], &mut planner)) {
                    *a += p;
                }
                count += 1;
                start += step;
            }
            Ok(acc.into_iter().map(|v| v / count as f64).collect())
        }
    }
}

pub fn srrmse(denoised: &[f64], clean: &[f64], cfg: &PsdConfig) -> Result<f64> {
    check_pair(denoised, clean)?;
    let pc = psd(clean, cfg)?;
    let pd = psd(denoised, cfg)?;
    let rc = rms_of(pc.iter().copied());
    if rc == 0.0 {
        return Err(CoreError::DegenerateSegment("clean reference has an all-zero spectrum".into()));
    }
    Ok(rms_of(pd.iter().zip(&pc).map(|(d, c)| d - c)) / rc)
}

/// Two-sided Student-t interval for the mean at confidence `level`.
pub fn confidence_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(CoreError::InvalidInput(format!(
            "confidence interval needs n >= 2, got {}",
            values.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CoreError::InvalidInput(format!("confidence level {level}")));
    }
    ensure_finite(values)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| CoreError::InvalidInput(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * (var / n).sqrt();
    Ok((mean - half, mean + half))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cc_examples() {
        let x = [1.0, 3.0, 2.0, 5.0];
        assert!((pearson_cc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 7.0).collect();
        assert!((pearson_cc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(pearson_cc(&x, &[1.0; 4]), Err(CoreError::DegenerateSegment(_))));
    }

    #[test]
    fn trrmse_examples() {
        let x = [1.0, -2.0, 0.5];
        assert_eq!(trrmse(&x, &x).unwrap(), 0.0);
        assert!((trrmse(&[0.0; 3], &x).unwrap() - 1.0).abs() < 1e-15);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!((trrmse(&x2, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(trrmse(&x, &[0.0; 3]).is_err());
    }

    #[test]
    fn psd_has_257_nonnegative_bins() {
        let x: Vec<f64> = (0..512).map(|i| ((i * 7919) % 13) as f64).collect();
        let p = psd(&x, &PsdConfig::default()).unwrap();
        assert_eq!(p.len(), 257);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ci_examples() {
        assert_eq!(confidence_interval(&[3.0; 5], 0.95).unwrap(), (3.0, 3.0));
        let (lo, hi) = confidence_interval(&[0.0, 1.0], 0.95).unwrap();
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
        assert!(confidence_interval(&[1.0], 0.95).is_err());
    }
}
