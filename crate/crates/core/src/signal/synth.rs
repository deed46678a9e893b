//! Synthetic signal sources.
//!
//! These stand in for recorded EEG/EMG when no external corpus is supplied:
//! the EEG surrogate is a 1/f background with alpha and theta rhythms, the
//! EMG surrogate is 20–120 Hz broadband noise under a bursty envelope. The
//! sinusoid+burst fixture is a deliberately easy, fully known problem used
//! by the learning tests.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::mix::mix_raw;
use super::{MixedPair, Segment, SegmentKind, SAMPLE_RATE_HZ, SEGMENT_LEN};

fn time(i: usize) -> f64 {
    i as f64 / SAMPLE_RATE_HZ
}

/// Sum of sinusoids on the 0.5 Hz grid between `lo` and `hi` with random phase
/// and Rayleigh-distributed amplitude scaled by `shape(f)`.
fn band_noise<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, shape: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut x = vec![0.0; SEGMENT_LEN];
    let mut f = lo;
    while f <= hi + 1e-9 {
        let u: f64 = rng.random_range(1e-12..1.0);
        let amp = shape(f) * (-2.0 * u.ln()).sqrt();
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, v) in x.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * f * time(i) + phase).sin();
        }
        f += 0.5;
    }
    x
}

fn rescale(x: &mut [f64], target_rms: f64) {
    let r = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if r > 0.0 {
        for v in x.iter_mut() {
            *v *= target_rms / r;
        }
    }
}

/// Clean EEG surrogate, rms in roughly [0.7, 1.3].
pub fn eeg_surrogate<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let mut x = band_noise(rng, 0.5, 40.0, |f| f.powf(-0.9));
    rescale(&mut x, 0.6);
    let alpha_f = rng.random_range(8.0..12.0);
    let alpha_a = rng.random_range(0.3..1.0);
    let env_f = rng.random_range(0.25..1.0);
    let env_p = rng.random_range(0.0..2.0 * PI);
    let alpha_p = rng.random_range(0.0..2.0 * PI);
    let theta_f = rng.random_range(4.0..7.5);
    let theta_a = rng.random_range(0.1..0.5);
    let theta_p = rng.random_range(0.0..2.0 * PI);
    for (i, v) in x.iter_mut().enumerate() {
        let t = time(i);
        let env = 0.6 + 0.4 * (2.0 * PI * env_f * t + env_p).sin();
        *v += alpha_a * env * (2.0 * PI * alpha_f * t + alpha_p).sin();
        *v += theta_a * (2.0 * PI * theta_f * t + theta_p).sin();
    }
    let target = rng.random_range(0.7..1.3);
    rescale(&mut x, target);
    x
}

/// EMG surrogate: broadband muscle noise with one to three bursts over a tonic floor.
pub fn emg_surrogate<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let mut x = band_noise(rng, 20.0, 120.0, |_| 1.0);
    rescale(&mut x, 1.0);
    let floor = rng.random_range(0.1..0.4);
    let bursts = rng.random_range(1..=3);
    let mut env = vec![floor; SEGMENT_LEN];
    for _ in 0..bursts {
        let centre = rng.random_range(0.0..SEGMENT_LEN as f64);
        let width = rng.random_range(15.0..60.0);
        let height = rng.random_range(1.0..3.0);
        for (i, e) in env.iter_mut().enumerate() {
            let z = (i as f64 - centre) / width;
            *e += height * (-0.5 * z * z).exp();
        }
    }
    for (v, e) in x.iter_mut().zip(&env) {
        *v *= e;
    }
    x
}

pub fn eeg_pool<R: Rng + ?Sized>(rng: &mut R, n: usize, prefix: &str) -> Vec<Segment> {
    (0..n)
        .map(|i| {
            Segment::new(eeg_surrogate(rng), SegmentKind::CleanEEG, format!("{prefix}{i}"))
                .expect("surrogate is finite and 512 long")
        })
        .collect()
}

pub fn emg_pool<R: Rng + ?Sized>(rng: &mut R, n: usize, prefix: &str) -> Vec<Segment> {
    (0..n)
        .map(|i| {
            Segment::new(emg_surrogate(rng), SegmentKind::EMGArtifact, format!("{prefix}{i}"))
                .expect("surrogate is finite and 512 long")
        })
        .collect()
}

/// Clean signal of the fixture: two to three low-frequency sinusoids.
pub fn fixture_clean<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let k = rng.random_range(2..=3);
    let comps: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                rng.random_range(1.0..8.0),
                rng.random_range(0.5..1.5),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    (0..SEGMENT_LEN)
        .map(|i| {
            comps
                .iter()
                .map(|&(f, a, p)| a * (2.0 * PI * f * time(i) + p).sin())
                .sum()
        })
        .collect()
}

/// Fixture noise: white-noise bursts confined to one or two 48–128 sample windows.
pub fn fixture_burst<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut x = vec![0.0; SEGMENT_LEN];
    let bursts = rng.random_range(1..=2);
    for _ in 0..bursts {
        let len = rng.random_range(48..=128);
        let start = rng.random_range(0..=SEGMENT_LEN - len);
        for (j, v) in x[start..start + len].iter_mut().enumerate() {
            let taper = (PI * (j as f64 + 0.5) / len as f64).sin();
            *v += taper * normal.sample(rng);
        }
    }
    x
}

/// `n` sinusoid+burst mixtures at `snr_db`.
pub fn sinusoid_burst_fixture<R: Rng + ?Sized>(rng: &mut R, n: usize, snr_db: f64) -> Vec<MixedPair> {
    (0..n)
        .map(|i| {
            let clean = fixture_clean(rng);
            let noise = fixture_burst(rng);
            let (contaminated, lambda) =
                mix_raw(&clean, &noise, snr_db).expect("fixture noise is non-zero");
            MixedPair {
                id: format!("fixture{i}"),
                snr_db,
                lambda,
                clean,
                contaminated,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surrogates_are_finite_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(eeg_surrogate(&mut a), eeg_surrogate(&mut b));
        let e = emg_surrogate(&mut a);
        assert!(e.iter().all(|v| v.is_finite()));
        assert!(e.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn fixture_noise_is_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = fixture_burst(&mut rng);
            let zeros = n.iter().filter(|&&v| v == 0.0).count();
            assert!(zeros >= SEGMENT_LEN - 256);
        }
    }
}
