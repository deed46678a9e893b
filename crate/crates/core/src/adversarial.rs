//! Transformer generator for masked target sites, the convolutional
//! discriminator, and the five-cycle adversarial training loop.

use std::fs;
use std::path::Path;

use atat_autograd::{
    Adam, AdamConfig, Bound, Checkpoint, Conv1d, Dense, ForwardCtx, Mode, NormAxis, ParamId,
    ParamStore, Tape, Tensor, TransformerEncoderLayer, Var,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};
use crate::mask::{splice_weights, TokenStream};
use crate::nn::{adam_step, add_grads, batch_tensor, collapse_is_divergence, finite_loss, rows_of};
use crate::signal::SEGMENT_LEN;

pub const GEN_PREFIX: &str = "gen.";
pub const DISC_PREFIX: &str = "disc.";

pub const MODEL_DIM: usize = 16;
pub const HEADS: usize = 4;
pub const FF_DIM: usize = 128;
pub const ENCODER_LAYERS: usize = 2;
pub const DISC_DROPOUT: f64 = 0.3;
pub const LEAKY_SLOPE: f32 = 0.2;
/// Epsilon of the in-graph z-score feeding the discriminator.
const ZSCORE_EPS: f32 = 1e-8;
/// Segments per tape; bounds attention memory without changing the maths.
const MICRO_BATCH: usize = 5;

#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub store: ParamStore,
    embed: Dense,
    position: ParamId,
    mask_embedding: ParamId,
    layers: Vec<TransformerEncoderLayer>,
    smoother: Conv1d,
    head: Dense,
}

fn sinusoid_table(len: usize, dim: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * rate;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() } as f32);
        }
    }
    Tensor::new(&[len, dim], data).expect("table shape")
}

impl GeneratorModel {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let p = GEN_PREFIX;
        let embed = Dense::new(&mut s, &format!("{p}embed"), 2, MODEL_DIM, true, &mut rng)?;
        let position = s.register(&format!("{p}position"), sinusoid_table(SEGMENT_LEN, MODEL_DIM))?;
        let mask_embedding = s.register(
            &format!("{p}mask_embedding"),
            atat_autograd::params::uniform(&[1, MODEL_DIM], 0.5, &mut rng),
        )?;
        let layers = (0..ENCODER_LAYERS)
            .map(|i| {
                TransformerEncoderLayer::new(&mut s, &format!("{p}layer{i}"), MODEL_DIM, HEADS, FF_DIM, &mut rng)
            })
            .collect::<atat_autograd::Result<Vec<_>>>()?;
        let smoother = Conv1d::new(&mut s, &format!("{p}smoother"), MODEL_DIM, MODEL_DIM, 3, &mut rng)?;
        let head = Dense::new(&mut s, &format!("{p}head"), MODEL_DIM, 1, true, &mut rng)?;
        Ok(Self {
            store: s,
            embed,
            position,
            mask_embedding,
            layers,
            smoother,
            head,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    /// Token and mask-indicator tensors for a batch of streams.
    fn inputs(streams: &[&TokenStream]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut tokens = Vec::with_capacity(streams.len() * SEGMENT_LEN * 2);
        let mut flags = Vec::with_capacity(streams.len() * SEGMENT_LEN);
        for s in streams {
            if s.tokens.len() != SEGMENT_LEN || s.mask.mask.len() != SEGMENT_LEN {
                return Err(CoreError::Shape(format!(
                    "token stream of length {}, expected {SEGMENT_LEN}",
                    s.tokens.len()
                )));
            }
            tokens.extend(s.tokens.iter().flat_map(|t| [t[0] as f32, t[1] as f32]));
            flags.extend(s.mask.mask.iter().map(|&m| m as u8 as f32));
        }
        let b = streams.len();
        Ok((
            Tensor::new(&[b, SEGMENT_LEN, 2], tokens)?,
            Tensor::new(&[b * SEGMENT_LEN, 1], flags)?,
        ))
    }

    /// `[B, 512, 2]` tokens and `[B*512, 1]` mask flags in, `[B, 512]` out.
    pub fn forward(&self, tape: &mut Tape<f32>, p: &Bound, tokens: Var, flags: Var) -> Result<Var> {
        let b = tape.shape(tokens)[0];
        let mut h = self.embed.forward(tape, p, tokens)?;
        h = tape.reshape(h, &[b, SEGMENT_LEN * MODEL_DIM])?;
        let pos = tape.reshape(p[self.position], &[SEGMENT_LEN * MODEL_DIM])?;
        h = tape.bias_add(h, pos, 1)?;
        let m = tape.matmul(flags, p[self.mask_embedding])?;
        let m = tape.reshape(m, &[b, SEGMENT_LEN * MODEL_DIM])?;
        h = tape.add(h, m)?;
        h = tape.reshape(h, &[b, SEGMENT_LEN, MODEL_DIM])?;
        for layer in &self.layers {
            h = layer.forward(tape, p, h)?;
        }
        h = tape.permute(h, &[0, 2, 1])?;
        h = self.smoother.forward(tape, p, h)?;
        h = tape.permute(h, &[0, 2, 1])?;
        h = self.head.forward(tape, p, h)?;
        Ok(tape.reshape(h, &[b, SEGMENT_LEN])?)
    }

    pub fn reconstruct(&self, streams: &[&TokenStream]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(streams.len());
        for chunk in streams.chunks(MICRO_BATCH) {
            let (tokens, flags) = Self::inputs(chunk)?;
            let mut tape = Tape::<f32>::new();
            let p = self.store.bind(&mut tape, false);
            let t = tape.constant(tokens);
            let f = tape.constant(flags);
            let y = self.forward(&mut tape, &p, t, f)?;
            out.extend(rows_of(tape.value(y)));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.extend(self.store.entries())?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorModel {
    pub store: ParamStore,
    conv1: Conv1d,
    conv2: Conv1d,
    dense: Dense,
}

impl DiscriminatorModel {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let p = DISC_PREFIX;
        let conv1 = Conv1d::new(&mut s, &format!("{p}conv1"), 1, 64, 3, &mut rng)?;
        let conv2 = Conv1d::new(&mut s, &format!("{p}conv2"), 64, 128, 3, &mut rng)?;
        let dense = Dense::new(&mut s, &format!("{p}dense"), 128 * SEGMENT_LEN, 1, true, &mut rng)?;
        Ok(Self {
            store: s,
            conv1,
            conv2,
            dense,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    /// `[B, 512]` z-scored signals in, `[B, 1]` probabilities out.
    pub fn forward(&self, tape: &mut Tape<f32>, p: &Bound, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let b = tape.shape(x)[0];
        if tape.shape(x) != [b, SEGMENT_LEN] {
            return Err(CoreError::Shape(format!(
                "discriminator expects [B, {SEGMENT_LEN}], got {:?}",
                tape.shape(x)
            )));
        }
        let train = ctx.is_train();
        let mut h = tape.reshape(x, &[b, 1, SEGMENT_LEN])?;
        h = self.conv1.forward(tape, p, h)?;
        h = tape.leaky_relu(h, LEAKY_SLOPE);
        h = tape.dropout(h, DISC_DROPOUT, train, &mut ctx.rng)?;
        h = self.conv2.forward(tape, p, h)?;
        h = tape.leaky_relu(h, LEAKY_SLOPE);
        h = tape.dropout(h, DISC_DROPOUT, train, &mut ctx.rng)?;
        h = tape.reshape(h, &[b, 128 * SEGMENT_LEN])?;
        h = self.dense.forward(tape, p, h)?;
        Ok(tape.sigmoid(h))
    }

    /// Inference-mode probabilities for z-scored signals.
    pub fn probability(&self, signals: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(signals.len());
        for chunk in signals.chunks(32) {
            let mut tape = Tape::<f32>::new();
            let p = self.store.bind(&mut tape, false);
            let x = tape.constant(batch_tensor(chunk)?);
            let y = self.forward(&mut tape, &p, x, &mut ForwardCtx::infer())?;
            out.extend(tape.value(y).data().iter().map(|&v| v as f64));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.extend(self.store.entries())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub cycles_per_iteration: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub adv_weight: f64,
    pub recon_weight: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            cycles_per_iteration: 5,
            epochs: 10,
            batch: 20,
            lr: 1e-4,
            adv_weight: 1.0,
            recon_weight: 1.0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidConfig(m));
        if self.cycles_per_iteration < 1 {
            return bad("cycles_per_iteration must be at least 1".into());
        }
        if self.batch < 1 || self.epochs < 1 {
            return bad(format!("epochs {} and batch {} must be positive", self.epochs, self.batch));
        }
        if !(self.adv_weight >= 0.0 && self.recon_weight >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if self.adv_weight == 0.0 && self.recon_weight == 0.0 {
            return bad("adv_weight and recon_weight cannot both be zero".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        Ok(())
    }
}

/// One training example: tokens, the frozen autoencoder output they were
/// built from, and the clean target (any affine scaling; the losses are
/// scale-free).
#[derive(Clone, Debug)]
pub struct GanSample {
    pub tokens: TokenStream,
    pub ae_output: Vec<f64>,
    pub clean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GanTraceRow {
    pub iteration: usize,
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub recon_cc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GanTrace {
    pub rows: Vec<GanTraceRow>,
    pub gen_steps: u64,
    pub disc_steps: u64,
}

impl GanTrace {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("iteration,gen_loss,disc_loss,recon_cc\n");
        for r in &self.rows {
            text.push_str(&format!("{},{},{},{}\n", r.iteration, r.gen_loss, r.disc_loss, r.recon_cc));
        }
        fs::write(path, text).map_err(io_err(path))
    }
}

fn zscore_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = r.len() as f64;
            let m = r.iter().sum::<f64>() / n;
            let sd = (r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            r.iter().map(|v| (v - m) / (sd + ZSCORE_EPS as f64)).collect()
        })
        .collect()
}

struct SpliceTerms {
    weights: Tensor<f32>,
    base: Tensor<f32>,
}

fn splice_terms(samples: &[&GanSample], crossfade: usize) -> Result<SpliceTerms> {
    let mut w = Vec::with_capacity(samples.len() * SEGMENT_LEN);
    let mut base = Vec::with_capacity(samples.len() * SEGMENT_LEN);
    for s in samples {
        let sw = splice_weights(&s.tokens.mask.mask, crossfade);
        for (wi, a) in sw.iter().zip(&s.ae_output) {
            w.push(*wi as f32);
            base.push(((1.0 - wi) * a) as f32);
        }
    }
    let shape = [samples.len(), SEGMENT_LEN];
    Ok(SpliceTerms {
        weights: Tensor::new(&shape, w)?,
        base: Tensor::new(&shape, base)?,
    })
}

/// Differentiable splice `w·gen + (1-w)·ae` of a micro-batch.
fn spliced_forward(
    gen: &GeneratorModel,
    tape: &mut Tape<f32>,
    p: &Bound,
    samples: &[&GanSample],
    crossfade: usize,
) -> Result<Var> {
    let streams: Vec<&TokenStream> = samples.iter().map(|s| &s.tokens).collect();
    let (tokens, flags) = GeneratorModel::inputs(&streams)?;
    let t = tape.constant(tokens);
    let f = tape.constant(flags);
    let g = gen.forward(tape, p, t, f)?;
    let terms = splice_terms(samples, crossfade)?;
    let g = tape.mul_const(g, &terms.weights)?;
    Ok(tape.add_const(g, &terms.base)?)
}

/// Spliced outputs of the current generator, without gradients.
pub fn spliced_outputs(gen: &GeneratorModel, samples: &[&GanSample], crossfade: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(MICRO_BATCH) {
        let mut tape = Tape::<f32>::new();
        let p = gen.store.bind(&mut tape, false);
        let y = spliced_forward(gen, &mut tape, &p, chunk, crossfade)?;
        out.extend(rows_of(tape.value(y)));
    }
    Ok(out)
}

fn mean_recon_cc(spliced: &[Vec<f64>], samples: &[&GanSample]) -> f64 {
    let ccs: Vec<f64> = spliced
        .iter()
        .zip(samples)
        .filter_map(|(o, s)| crate::metrics::pearson_cc(o, &s.clean).ok())
        .collect();
    ccs.iter().sum::<f64>() / ccs.len().max(1) as f64
}

/// Adversarial training of `gen` against `disc`.
///
/// Each iteration is one batch; within it, `cycles_per_iteration` times, the
/// generator takes a step through the current discriminator, then the
/// discriminator takes a step on clean vs. the spliced output that generator
/// step produced (detached). Reusing that forward pass halves the generator
/// work per cycle; the fakes lag the generator by exactly one update.
pub fn gan_train(
    gen: &mut GeneratorModel,
    disc: &mut DiscriminatorModel,
    dataset: &[GanSample],
    cfg: &GanConfig,
    crossfade: usize,
    seed: u64,
) -> Result<GanTrace> {
    cfg.validate()?;
    if dataset.len() < cfg.batch {
        return Err(CoreError::InvalidDataset(format!(
            "{} samples for batch size {}",
            dataset.len(),
            cfg.batch
        )));
    }
    let mut gen_opt = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut disc_opt = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = GanTrace::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut iteration = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch) {
            let batch: Vec<&GanSample> = idx.iter().map(|&i| &dataset[i]).collect();
            let real = zscore_rows(&batch.iter().map(|s| s.clean.clone()).collect::<Vec<_>>());
            let (mut g_sum, mut d_sum, mut cc_last) = (0.0, 0.0, 0.0);
            for _ in 0..cfg.cycles_per_iteration {
                let (g_loss, fake) = gen_step(gen, &mut gen_opt, disc, &batch, cfg, crossfade, &mut rng)?;
                g_sum += g_loss;
                trace.gen_steps += 1;
                cc_last = mean_recon_cc(&fake, &batch);
                d_sum += disc_step(disc, &mut disc_opt, &real, &zscore_rows(&fake), &mut rng)?;
                trace.disc_steps += 1;
            }
            let cycles = cfg.cycles_per_iteration as f64;
            trace.rows.push(GanTraceRow {
                iteration,
                gen_loss: g_sum / cycles,
                disc_loss: d_sum / cycles,
                recon_cc: cc_last,
            });
            iteration += 1;
        }
    }
    Ok(trace)
}

fn disc_step(
    disc: &mut DiscriminatorModel,
    opt: &mut Adam<f32>,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let b = real.len();
    let mut tape = Tape::<f32>::new();
    let p = disc.store.bind(&mut tape, true);
    let mut ctx = ForwardCtx::new(Mode::Train, ChaCha8Rng::seed_from_u64(rng.random()));
    let xr = tape.constant(batch_tensor(real)?);
    let xf = tape.constant(batch_tensor(fake)?);
    let dr = disc.forward(&mut tape, &p, xr, &mut ctx)?;
    let df = disc.forward(&mut tape, &p, xf, &mut ctx)?;
    let lr = tape.bce(dr, &Tensor::full(&[b, 1], 1.0))?;
    let lf = tape.bce(df, &Tensor::zeros(&[b, 1]))?;
    let loss = tape.add(lr, lf)?;
    let value = finite_loss(tape.value(loss).data()[0], "discriminator")?;
    let grads = tape.backward(loss)?;
    let grads = disc.store.collect_grads(&p, &grads);
    adam_step(&mut disc.store, opt, &grads, "discriminator")?;
    Ok(value)
}

fn gen_step(
    gen: &mut GeneratorModel,
    opt: &mut Adam<f32>,
    disc: &DiscriminatorModel,
    batch: &[&GanSample],
    cfg: &GanConfig,
    crossfade: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = batch.len();
    let mut fakes = Vec::with_capacity(b);
    let mut acc: Option<Vec<Tensor<f32>>> = None;
    let mut total = 0.0;
    for chunk in batch.chunks(MICRO_BATCH) {
        let share = chunk.len() as f32 / b as f32;
        let mut tape = Tape::<f32>::new();
        let p = gen.store.bind(&mut tape, true);
        let spliced = spliced_forward(gen, &mut tape, &p, chunk, crossfade)?;
        let clean: Vec<&[f64]> = chunk.iter().map(|s| s.clean.as_slice()).collect();
        let mut loss = None;
        if cfg.recon_weight > 0.0 {
            let rec = collapse_is_divergence(tape.cc_loss(spliced, &batch_tensor(&clean)?), "generator")?;
            loss = Some(tape.scale(rec, cfg.recon_weight as f32));
        }
        if cfg.adv_weight > 0.0 {
            let dp = disc.store.bind(&mut tape, false);
            let (z, _) = tape.standardize(spliced, NormAxis::Last, ZSCORE_EPS)?;
            let mut ctx = ForwardCtx::new(Mode::Train, ChaCha8Rng::seed_from_u64(rng.random()));
            let d = disc.forward(&mut tape, &dp, z, &mut ctx)?;
            let adv = tape.bce(d, &Tensor::full(&[chunk.len(), 1], 1.0))?;
            let adv = tape.scale(adv, cfg.adv_weight as f32);
            loss = Some(match loss {
                Some(l) => tape.add(l, adv)?,
                None => adv,
            });
        }
        fakes.extend(rows_of(tape.value(spliced)));
        let loss = loss.expect("validated: at least one loss weight is positive");
        total += share as f64 * finite_loss(tape.value(loss).data()[0], "generator")?;
        let grads = tape.backward(loss)?;
        add_grads(&mut acc, gen.store.collect_grads(&p, &grads), share);
    }
    let grads = acc.expect("non-empty batch");
    adam_step(&mut gen.store, opt, &grads, "generator")?;
    Ok((total, fakes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_match_layer_arithmetic() {
        let dense = |i: usize, o: usize| i * o + o;
        let layer = 4 * dense(16, 16) + 2 * 32 + dense(16, 128) + dense(128, 16);
        let gen = dense(2, 16) + 512 * 16 + 16 + 2 * layer + (16 * 16 * 3 + 16) + dense(16, 1);
        assert_eq!(GeneratorModel::new(0).unwrap().num_parameters(), gen);
        assert_eq!(gen, 19841);
        let disc = (64 * 3 + 64) + (128 * 64 * 3 + 128) + dense(128 * 512, 1);
        assert_eq!(DiscriminatorModel::new(0).unwrap().num_parameters(), disc);
        assert_eq!(disc, 90497);
    }

    #[test]
    fn config_validation() {
        assert!(GanConfig::default().validate().is_ok());
        let c = GanConfig {
            adv_weight: 0.0,
            recon_weight: 0.0,
            ..GanConfig::default()
        };
        assert!(matches!(c.validate(), Err(CoreError::InvalidConfig(_))));
        let c = GanConfig {
            cycles_per_iteration: 0,
            ..GanConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
