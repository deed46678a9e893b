//! Convolutional denoising autoencoder: the first filtration pass and the
//! source of the noise proxy used for masking.

use atat_autograd::{
    Adam, AdamConfig, BatchNorm, Bound, Checkpoint, Conv1d, ForwardCtx, Mode, ParamStore,
    PoolDims, Tape, Var,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{adam_step, batch_tensor, collapse_is_divergence, finite_loss, rows_of};
use crate::signal::SEGMENT_LEN;

pub const PREFIX: &str = "ae.";

/// Largest tolerated excursion outside `[0, 1]` for normalised input.
pub const RANGE_TOLERANCE: f64 = 1e-6;

const INFER_CHUNK: usize = 50;

#[derive(Clone, Debug)]
pub struct AutoencoderModel {
    pub store: ParamStore,
    enc1: Conv1d,
    bn1: BatchNorm,
    enc2: Conv1d,
    bn2: BatchNorm,
    mid: Conv1d,
    bn3: BatchNorm,
    dec1: Conv1d,
    bn4: BatchNorm,
    dec2: Conv1d,
    bn5: BatchNorm,
    head: Conv1d,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 20,
            lr: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AeLossTrace {
    pub batch_losses: Vec<f64>,
    pub epoch_means: Vec<f64>,
}

impl AutoencoderModel {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let p = PREFIX;
        let enc1 = Conv1d::new(&mut s, &format!("{p}enc1"), 1, 32, 3, &mut rng)?;
        let bn1 = BatchNorm::new(&mut s, &format!("{p}bn1"), 32)?;
        let enc2 = Conv1d::new(&mut s, &format!("{p}enc2"), 32, 64, 3, &mut rng)?;
        let bn2 = BatchNorm::new(&mut s, &format!("{p}bn2"), 64)?;
        let mid = Conv1d::new(&mut s, &format!("{p}mid"), 64, 128, 3, &mut rng)?;
        let bn3 = BatchNorm::new(&mut s, &format!("{p}bn3"), 128)?;
        let dec1 = Conv1d::new(&mut s, &format!("{p}dec1"), 128, 64, 3, &mut rng)?;
        let bn4 = BatchNorm::new(&mut s, &format!("{p}bn4"), 64)?;
        let dec2 = Conv1d::new(&mut s, &format!("{p}dec2"), 64, 32, 3, &mut rng)?;
        let bn5 = BatchNorm::new(&mut s, &format!("{p}bn5"), 32)?;
        let head = Conv1d::new(&mut s, &format!("{p}head"), 32, 1, 3, &mut rng)?;
        Ok(Self {
            store: s,
            enc1,
            bn1,
            enc2,
            bn2,
            mid,
            bn3,
            dec1,
            bn4,
            dec2,
            bn5,
            head,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    /// `[B, 512]` in, `[B, 512]` sigmoid output.
    pub fn forward(&self, tape: &mut Tape<f32>, p: &Bound, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let b = tape.shape(x)[0];
        let s = &self.store;
        let mut h = tape.reshape(x, &[b, 1, SEGMENT_LEN])?;
        h = self.enc1.forward(tape, p, h)?;
        h = self.bn1.forward(tape, s, p, h, ctx)?;
        h = tape.relu(h);
        h = tape.maxpool(h, PoolDims::OneD)?;
        h = self.enc2.forward(tape, p, h)?;
        h = self.bn2.forward(tape, s, p, h, ctx)?;
        h = tape.relu(h);
        h = tape.maxpool(h, PoolDims::OneD)?;
        h = self.mid.forward(tape, p, h)?;
        h = self.bn3.forward(tape, s, p, h, ctx)?;
        h = tape.relu(h);
        h = self.dec1.forward(tape, p, h)?;
        h = self.bn4.forward(tape, s, p, h, ctx)?;
        h = tape.relu(h);
        h = tape.upsample1d(h, 2)?;
        h = self.dec2.forward(tape, p, h)?;
        h = self.bn5.forward(tape, s, p, h, ctx)?;
        h = tape.relu(h);
        h = tape.upsample1d(h, 2)?;
        h = self.head.forward(tape, p, h)?;
        h = tape.sigmoid(h);
        Ok(tape.reshape(h, &[b, SEGMENT_LEN])?)
    }

    /// Inference on MinMax01-normalised segments.
    pub fn denoise(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for x in inputs {
            check_normalized(x)?;
        }
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(INFER_CHUNK) {
            let mut tape = Tape::<f32>::new();
            let p = self.store.bind(&mut tape, false);
            let x = tape.constant(batch_tensor(chunk)?);
            let y = self.forward(&mut tape, &p, x, &mut ForwardCtx::infer())?;
            out.extend(rows_of(tape.value(y)));
        }
        Ok(out)
    }

    pub fn denoise_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.denoise(&[input.to_vec()])?.remove(0))
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.extend(self.store.entries())?;
        Ok(())
    }
}

pub fn check_normalized(x: &[f64]) -> Result<()> {
    if x.len() != SEGMENT_LEN {
        return Err(CoreError::Shape(format!(
            "autoencoder expects {SEGMENT_LEN} samples, got {}",
            x.len()
        )));
    }
    match x
        .iter()
        .position(|&v| !(v >= -RANGE_TOLERANCE && v <= 1.0 + RANGE_TOLERANCE))
    {
        Some(i) => Err(CoreError::Normalization(format!(
            "sample {i} = {} lies outside [0, 1]",
            x[i]
        ))),
        None => Ok(()),
    }
}

/// Trains on `(input, target)` pairs, both MinMax01-normalised, with the
/// correlation loss averaged over each batch.
pub fn ae_train(
    model: &mut AutoencoderModel,
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &AeTrainConfig,
    seed: u64,
) -> Result<AeLossTrace> {
    if cfg.batch < 2 {
        return Err(CoreError::InvalidConfig(format!(
            "autoencoder batch must be at least 2, got {}",
            cfg.batch
        )));
    }
    if pairs.len() < cfg.batch {
        return Err(CoreError::InvalidDataset(format!(
            "{} training pairs for batch size {}",
            pairs.len(),
            cfg.batch
        )));
    }
    for (x, y) in pairs {
        check_normalized(x)?;
        check_normalized(y)?;
    }
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = AeLossTrace::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch = Vec::new();
        for idx in order.chunks(cfg.batch) {
            if idx.len() < 2 {
                continue;
            }
            let inputs: Vec<&[f64]> = idx.iter().map(|&i| pairs[i].0.as_slice()).collect();
            let targets: Vec<&[f64]> = idx.iter().map(|&i| pairs[i].1.as_slice()).collect();
            let mut tape = Tape::<f32>::new();
            let p = model.store.bind(&mut tape, true);
            let x = tape.constant(batch_tensor(&inputs)?);
            let mut ctx = ForwardCtx::new(Mode::Train, ChaCha8Rng::seed_from_u64(rng.random()));
            let y = model.forward(&mut tape, &p, x, &mut ctx)?;
            let loss = collapse_is_divergence(tape.cc_loss(y, &batch_tensor(&targets)?), "autoencoder")?;
            let value = finite_loss(tape.value(loss).data()[0], "autoencoder")?;
            let grads = tape.backward(loss)?;
            let grads = model.store.collect_grads(&p, &grads);
            adam_step(&mut model.store, &mut adam, &grads, "autoencoder")?;
            ctx.apply_bn_updates(&mut model.store);
            epoch.push(value);
        }
        trace.epoch_means.push(epoch.iter().sum::<f64>() / epoch.len() as f64);
        trace.batch_losses.extend(epoch);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        let conv = |ci: usize, co: usize| co * ci * 3 + co;
        let bn = |c: usize| 2 * c;
        let expected = conv(1, 32) + bn(32)
            + conv(32, 64) + bn(64)
            + conv(64, 128) + bn(128)
            + conv(128, 64) + bn(64)
            + conv(64, 32) + bn(32)
            + conv(32, 1);
        assert_eq!(AutoencoderModel::new(0).unwrap().num_parameters(), expected);
        assert_eq!(expected, 62593);
    }

    #[test]
    fn untrained_output_in_open_unit_interval() {
        let m = AutoencoderModel::new(1).unwrap();
        let x: Vec<f64> = (0..512).map(|i| i as f64 / 511.0).collect();
        let y = m.denoise_one(&x).unwrap();
        assert_eq!(y.len(), 512);
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(y, m.denoise_one(&x).unwrap());
    }

    #[test]
    fn rejects_unnormalized_input_and_small_datasets() {
        let mut m = AutoencoderModel::new(1).unwrap();
        let mut x = vec![0.5; 512];
        x[3] = 1.1;
        assert!(matches!(m.denoise_one(&x), Err(CoreError::Normalization(_))));
        let pairs = vec![(vec![0.5; 512], vec![0.5; 512]); 5];
        assert!(matches!(
            ae_train(&mut m, &pairs, &AeTrainConfig::default(), 0),
            Err(CoreError::InvalidDataset(_))
        ));
    }
}
