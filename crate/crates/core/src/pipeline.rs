//! The assembled denoiser: gate → autoencoder → mask → transformer → splice,
//! plus per-SNR training and checkpoint persistence.
//!
//! Each SNR level owns one model instance. Segments are MinMax01-normalised
//! on the way in; on the way out the normalised reconstruction is mapped
//! back through the input's own normalisation and rescaled about its mean by
//! a per-model gain fitted on the training set, because the correlation
//! losses used in training leave the output amplitude unconstrained.

use std::path::{Path, PathBuf};
use std::time::Instant;

use atat_autograd::{Checkpoint, Tensor};

use crate::adversarial::{gan_train, DiscriminatorModel, GanSample, GanTrace, GeneratorModel};
use crate::autoencoder::{ae_train, AeLossTrace, AutoencoderModel};
use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::gate::{choose_class, gate_train, GateModel, GateTrace};
use crate::mask::{build_mask, splice, tokenize, windowed_cc, MaskConfig, NoiseMask, TokenStream};
use crate::nn::{load_checkpoint, restore};
use crate::seed::derive_seed;
use crate::signal::{denormalize, normalize, MixedPair, NormMode, NormState};

pub const GAIN_ENTRY: &str = "cal.gain";
pub const AE_GAIN_ENTRY: &str = "cal.ae_gain";
pub const GATE_LEVELS_ENTRY: &str = "cal.gate_levels";
pub const GATE_FILE: &str = "gate.atat";

/// Segments per parallel work unit; fixed so results do not depend on the
/// thread count.
const BLOCK: usize = 20;

pub fn model_file(snr_db: f64) -> String {
    format!("snr_{snr_db}dB.atat")
}

/// Label suffix used when deriving per-SNR seeds.
fn snr_label(snr_db: f64) -> String {
    format!("snr={snr_db}")
}

#[derive(Clone, Debug)]
pub struct Adversarial {
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
}

/// One per-SNR model instance.
#[derive(Clone, Debug)]
pub struct SnrModel {
    pub snr_db: f64,
    pub autoencoder: AutoencoderModel,
    /// Absent in autoencoder-only (ablation) mode.
    pub adversarial: Option<Adversarial>,
    /// Output gain of the full pipeline.
    pub gain: f64,
    /// Output gain of the autoencoder-only reconstruction.
    pub ae_gain: f64,
}

/// Autoencoder stage output for one segment.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub state: NormState,
    pub input_mean: f64,
    pub ae_output: Vec<f64>,
    pub tokens: TokenStream,
}

/// Final output for one segment.
#[derive(Clone, Debug)]
pub struct Denoised {
    pub snr_db: f64,
    pub probabilities: Vec<f64>,
    pub mask: NoiseMask,
    /// Normalised reconstruction before denormalisation.
    pub normalized: Vec<f64>,
    pub output: Vec<f64>,
    /// The autoencoder-only reconstruction in signal units (equal to
    /// `output` when there is no adversarial stage).
    pub ae_only: Vec<f64>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Runs the autoencoder and builds masks and tokens for raw segments.
pub fn prepare(ae: &AutoencoderModel, raw: &[Vec<f64>], mask: &MaskConfig) -> Result<Vec<Prepared>> {
    let mut states = Vec::with_capacity(raw.len());
    let mut inputs = Vec::with_capacity(raw.len());
    for y in raw {
        let (yn, st) = normalize(y, NormMode::MinMax01)?;
        states.push(st);
        inputs.push(yn);
    }
    let outputs = ae.denoise(&inputs)?;
    raw.iter()
        .zip(states)
        .zip(inputs.iter().zip(outputs))
        .map(|((y, state), (yn, out))| {
            let profile = windowed_cc(yn, &out, mask.window_len, mask.stride)?
                .with_threshold(mask.threshold);
            let m = build_mask(&profile);
            let tokens = tokenize(yn, &out, &m)?;
            Ok(Prepared {
                state,
                input_mean: mean(y),
                ae_output: out,
                tokens,
            })
        })
        .collect()
}

impl SnrModel {
    /// Normalised spliced reconstructions (the autoencoder output alone when
    /// no generator is present).
    pub fn reconstruct(&self, prepared: &[Prepared], mask: &MaskConfig) -> Result<Vec<Vec<f64>>> {
        let Some(adv) = &self.adversarial else {
            return Ok(prepared.iter().map(|p| p.ae_output.clone()).collect());
        };
        let streams: Vec<&TokenStream> = prepared.iter().map(|p| &p.tokens).collect();
        let generated = adv.generator.reconstruct(&streams)?;
        prepared
            .iter()
            .zip(generated)
            .map(|(p, g)| splice(&p.ae_output, &g, &p.tokens.mask, mask.crossfade))
            .collect()
    }

    /// Maps a normalised reconstruction back to signal units with `gain`.
    pub fn output(prepared: &Prepared, normalized: &[f64], gain: f64) -> Vec<f64> {
        let u = denormalize(normalized, &prepared.state);
        let mu = mean(&u);
        u.iter().map(|v| prepared.input_mean + gain * (v - mu)).collect()
    }

    pub fn denoise(&self, raw: &[Vec<f64>], mask: &MaskConfig) -> Result<Vec<Denoised>> {
        let prepared = prepare(&self.autoencoder, raw, mask)?;
        let recon = self.reconstruct(&prepared, mask)?;
        Ok(prepared
            .into_iter()
            .zip(recon)
            .map(|(p, r)| Denoised {
                snr_db: self.snr_db,
                probabilities: Vec::new(),
                output: Self::output(&p, &r, self.gain),
                ae_only: Self::output(&p, &p.ae_output, self.ae_gain),
                mask: p.tokens.mask,
                normalized: r,
            })
            .collect())
    }

    /// Fits both output gains on training pairs; returns the pipeline gain.
    pub fn calibrate(&mut self, pairs: &[MixedPair], mask: &MaskConfig) -> Result<f64> {
        let raw: Vec<Vec<f64>> = pairs.iter().map(|p| p.contaminated.clone()).collect();
        let prepared = prepare(&self.autoencoder, &raw, mask)?;
        let recon = self.reconstruct(&prepared, mask)?;
        let ae: Vec<Vec<f64>> = prepared.iter().map(|p| p.ae_output.clone()).collect();
        self.gain = fit_gain(&prepared, &recon, pairs);
        self.ae_gain = fit_gain(&prepared, &ae, pairs);
        Ok(self.gain)
    }

    pub fn num_parameters(&self) -> usize {
        self.autoencoder.num_parameters()
            + self
                .adversarial
                .as_ref()
                .map_or(0, |a| a.generator.num_parameters() + a.discriminator.num_parameters())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        self.autoencoder.to_checkpoint(&mut ckpt)?;
        if let Some(adv) = &self.adversarial {
            adv.generator.to_checkpoint(&mut ckpt)?;
            adv.discriminator.to_checkpoint(&mut ckpt)?;
        }
        ckpt.push(GAIN_ENTRY, Tensor::new(&[1], vec![self.gain as f32])?)?;
        ckpt.push(AE_GAIN_ENTRY, Tensor::new(&[1], vec![self.ae_gain as f32])?)?;
        Ok(ckpt)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(model_file(self.snr_db));
        self.to_checkpoint()?
            .save(&path)
            .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Loads the model for `snr_db` from `dir`; the generator and
    /// discriminator are restored only if the checkpoint contains them.
    pub fn load(dir: &Path, snr_db: f64) -> Result<Self> {
        let path = dir.join(model_file(snr_db));
        let ckpt = load_checkpoint(&path)?;
        let mut autoencoder = AutoencoderModel::new(0)?;
        restore(&mut autoencoder.store, &ckpt, &path)?;
        let adversarial = if ckpt.with_prefix(crate::adversarial::GEN_PREFIX).next().is_some() {
            let mut generator = GeneratorModel::new(0)?;
            let mut discriminator = DiscriminatorModel::new(0)?;
            restore(&mut generator.store, &ckpt, &path)?;
            restore(&mut discriminator.store, &ckpt, &path)?;
            Some(Adversarial {
                generator,
                discriminator,
            })
        } else {
            None
        };
        let scalar = |name: &str| {
            ckpt.get(name)
                .and_then(|t| t.data().first().copied())
                .map(|v| v as f64)
                .ok_or_else(|| CoreError::Config(format!("{}: missing `{name}`", path.display())))
        };
        Ok(Self {
            snr_db,
            autoencoder,
            adversarial,
            gain: scalar(GAIN_ENTRY)?,
            ae_gain: scalar(AE_GAIN_ENTRY)?,
        })
    }
}

/// Least-squares gain `g` minimising `Σ‖(c - c̄) - g·(u - ū)‖²` over the
/// training pairs, `u` being the denormalised reconstruction. Rounded to
/// `f32` so a reloaded checkpoint reproduces it exactly.
fn fit_gain(prepared: &[Prepared], recon: &[Vec<f64>], pairs: &[MixedPair]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((p, r), pair) in prepared.iter().zip(recon).zip(pairs) {
        let u = denormalize(r, &p.state);
        let (mu, mc) = (mean(&u), mean(&pair.clean));
        for (v, c) in u.iter().zip(&pair.clean) {
            num += (c - mc) * (v - mu);
            den += (v - mu) * (v - mu);
        }
    }
    let gain = if den > 0.0 && num.is_finite() { num / den } else { 1.0 };
    gain as f32 as f64
}

/// The full multi-SNR denoiser.
#[derive(Clone, Debug)]
pub struct AtatSystem {
    /// Absent when only one SNR level is configured.
    pub gate: Option<GateModel>,
    pub models: Vec<SnrModel>,
    pub mask: MaskConfig,
}

impl AtatSystem {
    pub fn model_for(&self, snr_db: f64) -> Result<&SnrModel> {
        self.models
            .iter()
            .find(|m| (m.snr_db - snr_db).abs() < 1e-9)
            .ok_or_else(|| CoreError::Config(format!("no model for the {snr_db} dB class")))
    }

    /// Gate decision for raw segments: `(snr_db, probabilities)` each.
    pub fn route(&self, raw: &[Vec<f64>]) -> Result<Vec<(f64, Vec<f64>)>> {
        match &self.gate {
            Some(gate) => {
                let z = raw
                    .iter()
                    .map(|y| normalize(y, NormMode::ZScore).map(|(z, _)| z))
                    .collect::<Result<Vec<_>>>()?;
                Ok(gate
                    .predict_proba(&z)?
                    .into_iter()
                    .map(|p| (gate.classes.levels[choose_class(&p)], p))
                    .collect())
            }
            None => match self.models.as_slice() {
                [only] => Ok(raw.iter().map(|_| (only.snr_db, vec![1.0])).collect()),
                _ => Err(CoreError::Config(
                    "several SNR models but no gate to choose between them".into(),
                )),
            },
        }
    }

    fn denoise_block(&self, raw: &[Vec<f64>]) -> Result<Vec<Denoised>> {
        let routes = self.route(raw)?;
        let mut out: Vec<Option<Denoised>> = vec![None; raw.len()];
        for model in &self.models {
            let idx: Vec<usize> = (0..raw.len())
                .filter(|&i| (routes[i].0 - model.snr_db).abs() < 1e-9)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let subset: Vec<Vec<f64>> = idx.iter().map(|&i| raw[i].clone()).collect();
            for (i, d) in idx.into_iter().zip(model.denoise(&subset, &self.mask)?) {
                out[i] = Some(d);
            }
        }
        raw.iter()
            .zip(out)
            .zip(routes)
            .map(|((_, d), (snr, probs))| match d {
                Some(mut d) => {
                    d.probabilities = probs;
                    Ok(d)
                }
                None => Err(CoreError::Config(format!("no model for the {snr} dB class"))),
            })
            .collect()
    }

    /// Denoises raw segments, spreading fixed-size blocks over `threads`
    /// workers. The result is independent of the thread count.
    pub fn denoise(&self, raw: &[Vec<f64>], threads: usize) -> Result<Vec<Denoised>> {
        let blocks: Vec<&[Vec<f64>]> = raw.chunks(BLOCK).collect();
        let threads = threads.clamp(1, blocks.len().max(1));
        if threads == 1 {
            let mut out = Vec::with_capacity(raw.len());
            for b in blocks {
                out.extend(self.denoise_block(b)?);
            }
            return Ok(out);
        }
        let results: Vec<Result<Vec<Denoised>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let blocks = &blocks;
                    s.spawn(move || {
                        blocks
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| i % threads == t)
                            .map(|(_, b)| self.denoise_block(b))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            let per_thread: Vec<Vec<Result<Vec<Denoised>>>> =
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
            let mut iters: Vec<_> = per_thread.into_iter().map(|v| v.into_iter()).collect();
            (0..blocks.len()).map(|i| iters[i % threads].next().expect("block result")).collect()
        });
        let mut out = Vec::with_capacity(raw.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        if let Some(gate) = &self.gate {
            paths.push(save_gate(gate, dir)?);
        }
        for m in &self.models {
            paths.push(m.save(dir)?);
        }
        Ok(paths)
    }

    /// Loads the gate (when more than one level is configured) and one model
    /// per level of `cfg`.
    pub fn load(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        let gate = if cfg.snr_levels.len() > 1 { Some(load_gate(dir, cfg)?) } else { None };
        let models = cfg
            .snr_levels
            .iter()
            .map(|&snr| SnrModel::load(dir, snr))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            gate,
            models,
            mask: cfg.mask,
        })
    }
}

pub fn save_gate(gate: &GateModel, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(GATE_FILE);
    let mut ckpt = Checkpoint::new();
    gate.to_checkpoint(&mut ckpt)?;
    let levels: Vec<f32> = gate.classes.levels.iter().map(|&v| v as f32).collect();
    ckpt.push(GATE_LEVELS_ENTRY, Tensor::new(&[levels.len()], levels)?)?;
    ckpt.save(&path)
        .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
    Ok(path)
}

pub fn load_gate(dir: &Path, cfg: &RunConfig) -> Result<GateModel> {
    let path = dir.join(GATE_FILE);
    let ckpt = load_checkpoint(&path)?;
    let stored: Vec<f64> = ckpt
        .get(GATE_LEVELS_ENTRY)
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .unwrap_or_default();
    let classes = cfg.classes()?;
    let matches = stored.len() == classes.len()
        && stored.iter().zip(&classes.levels).all(|(a, b)| (a - b).abs() < 1e-6);
    if !matches {
        return Err(CoreError::Config(format!(
            "{}: gate trained for levels {stored:?}, config has {:?}",
            path.display(),
            classes.levels
        )));
    }
    let mut gate = GateModel::new(classes, &cfg.gate, 0)?;
    restore(&mut gate.store, &ckpt, &path)?;
    Ok(gate)
}

/// Pairs at one SNR level, in dataset order.
pub fn pairs_at(pairs: &[MixedPair], snr_db: f64) -> Vec<MixedPair> {
    pairs.iter().filter(|p| (p.snr_db - snr_db).abs() < 1e-9).cloned().collect()
}

/// Trains a fresh autoencoder for one SNR level; the model comes back
/// calibrated and without an adversarial stage.
pub fn train_autoencoder_stage(
    pairs: &[MixedPair],
    snr_db: f64,
    cfg: &RunConfig,
) -> Result<(SnrModel, AeLossTrace)> {
    let label = snr_label(snr_db);
    let data = pairs
        .iter()
        .map(|p| {
            Ok((
                normalize(&p.contaminated, NormMode::MinMax01)?.0,
                normalize(&p.clean, NormMode::MinMax01)?.0,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut autoencoder = AutoencoderModel::new(derive_seed(cfg.seed, &format!("ae/init/{label}")))?;
    let trace = ae_train(
        &mut autoencoder,
        &data,
        &cfg.autoencoder,
        derive_seed(cfg.seed, &format!("ae/train/{label}")),
    )?;
    let mut model = SnrModel {
        snr_db,
        autoencoder,
        adversarial: None,
        gain: 1.0,
        ae_gain: 1.0,
    };
    model.calibrate(pairs, &cfg.mask)?;
    Ok((model, trace))
}

/// Adds (or retrains) the adversarial stage on top of `model`'s frozen
/// autoencoder, then recalibrates.
pub fn train_adversarial_stage(
    model: &mut SnrModel,
    pairs: &[MixedPair],
    cfg: &RunConfig,
) -> Result<GanTrace> {
    let label = snr_label(model.snr_db);
    let raw: Vec<Vec<f64>> = pairs.iter().map(|p| p.contaminated.clone()).collect();
    let prepared = prepare(&model.autoencoder, &raw, &cfg.mask)?;
    let samples = prepared
        .into_iter()
        .zip(pairs)
        .map(|(p, pair)| {
            Ok(GanSample {
                tokens: p.tokens,
                ae_output: p.ae_output,
                clean: normalize(&pair.clean, NormMode::MinMax01)?.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut generator = GeneratorModel::new(derive_seed(cfg.seed, &format!("gen/init/{label}")))?;
    let mut discriminator = DiscriminatorModel::new(derive_seed(cfg.seed, &format!("disc/init/{label}")))?;
    let trace = gan_train(
        &mut generator,
        &mut discriminator,
        &samples,
        &cfg.gan,
        cfg.mask.crossfade,
        derive_seed(cfg.seed, &format!("gan/train/{label}")),
    )?;
    model.adversarial = Some(Adversarial {
        generator,
        discriminator,
    });
    model.calibrate(pairs, &cfg.mask)?;
    Ok(trace)
}

/// Gate examples: z-scored contaminated segments labelled by SNR class.
pub fn gate_examples(pairs: &[MixedPair], cfg: &RunConfig) -> Result<Vec<(Vec<f64>, usize)>> {
    let classes = cfg.classes()?;
    pairs
        .iter()
        .map(|p| {
            let class = classes.class_of(p.snr_db).ok_or_else(|| {
                CoreError::InvalidDataset(format!("pair `{}` at {} dB is not a configured level", p.id, p.snr_db))
            })?;
            Ok((normalize(&p.contaminated, NormMode::ZScore)?.0, class))
        })
        .collect()
}

pub fn train_gate_stage(pairs: &[MixedPair], cfg: &RunConfig) -> Result<(GateModel, GateTrace)> {
    let examples = gate_examples(pairs, cfg)?;
    let mut gate = GateModel::new(cfg.classes()?, &cfg.gate, derive_seed(cfg.seed, "gate/init"))?;
    let trace = gate_train(&mut gate, &examples, &cfg.gate, derive_seed(cfg.seed, "gate/train"))?;
    Ok((gate, trace))
}

/// Wall-clock seconds per training phase.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct PhaseTimes {
    pub phases: Vec<(String, f64)>,
}

impl PhaseTimes {
    pub fn time<T>(&mut self, name: impl Into<String>, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.phases.push((name.into(), start.elapsed().as_secs_f64()));
        Ok(out)
    }

    pub fn total(&self) -> f64 {
        self.phases.iter().map(|(_, s)| s).sum()
    }

    /// Summed time of phases whose name starts with `prefix`.
    pub fn share(&self, prefix: &str) -> f64 {
        self.phases
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, s)| s)
            .sum()
    }
}

/// Everything `train_all` produces.
pub struct TrainedSystem {
    pub system: AtatSystem,
    pub ae_traces: Vec<(f64, AeLossTrace)>,
    pub gan_traces: Vec<(f64, GanTrace)>,
    pub gate_trace: Option<GateTrace>,
    pub times: PhaseTimes,
}

/// Gate (when several levels are configured), then per-SNR autoencoders,
/// then per-SNR adversarial stages unless `cfg.skip_gan`.
pub fn train_all(train: &[MixedPair], cfg: &RunConfig) -> Result<TrainedSystem> {
    cfg.validate()?;
    let mut times = PhaseTimes::default();
    let (gate, gate_trace) = if cfg.snr_levels.len() > 1 {
        let (g, t) = times.time("gate", || train_gate_stage(train, cfg))?;
        (Some(g), Some(t))
    } else {
        (None, None)
    };
    let mut models = Vec::new();
    let mut ae_traces = Vec::new();
    let mut gan_traces = Vec::new();
    for &snr in &cfg.snr_levels {
        let pairs = pairs_at(train, snr);
        if pairs.is_empty() {
            return Err(CoreError::InvalidDataset(format!("no training pairs at {snr} dB")));
        }
        let (mut model, trace) =
            times.time(format!("autoencoder/{snr}"), || train_autoencoder_stage(&pairs, snr, cfg))?;
        ae_traces.push((snr, trace));
        if !cfg.skip_gan {
            let trace = times.time(format!("adversarial/{snr}"), || {
                train_adversarial_stage(&mut model, &pairs, cfg)
            })?;
            gan_traces.push((snr, trace));
        }
        models.push(model);
    }
    Ok(TrainedSystem {
        system: AtatSystem {
            gate,
            models,
            mask: cfg.mask,
        },
        ae_traces,
        gan_traces,
        gate_trace,
        times,
    })
}
