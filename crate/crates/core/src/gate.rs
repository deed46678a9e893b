//! SNR gate: an LSTM/CNN hybrid classifier that picks which per-SNR model
//! instance handles a contaminated segment. It only routes; it never
//! touches the signal.

use std::fs;
use std::path::Path;

use atat_autograd::{
    softmax_in_place, Adam, AdamConfig, BatchNorm, Bound, Checkpoint, Conv2d, Dense, ForwardCtx,
    Lstm, Mode, ParamStore, PoolDims, Tape, Var,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};
use crate::nn::{adam_step, batch_tensor, finite_loss};
use crate::signal::{normalize, NormMode, SEGMENT_LEN, SNR_RANGE_DB};

pub const PREFIX: &str = "gate.";
const ROWS: usize = 32;
const COLS: usize = 16;

/// Ordered SNR levels; class `i` is `levels[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrClassSet {
    pub levels: Vec<f64>,
}

impl Default for SnrClassSet {
    fn default() -> Self {
        Self {
            levels: vec![-7.0, 2.0],
        }
    }
}

impl SnrClassSet {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        let set = Self { levels };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(CoreError::InvalidConfig("empty SNR level list".into()));
        }
        let (lo, hi) = SNR_RANGE_DB;
        for w in self.levels.windows(2) {
            if !(w[0] < w[1]) {
                return Err(CoreError::InvalidConfig(format!(
                    "SNR levels must be strictly increasing: {:?}",
                    self.levels
                )));
            }
        }
        if let Some(v) = self.levels.iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(CoreError::InvalidConfig(format!("SNR level {v} outside [{lo}, {hi}] dB")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn class_of(&self, snr_db: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - snr_db).abs() < 1e-9)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lstm_hidden: usize,
    pub cnn_filters: usize,
    pub lc_filters: usize,
    pub dense: usize,
    pub dropout: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 100,
            lr: 1e-3,
            lstm_hidden: 32,
            cnn_filters: 16,
            lc_filters: 8,
            dense: 64,
            dropout: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GateModel {
    pub store: ParamStore,
    pub classes: SnrClassSet,
    cfg: GateConfig,
    cnn_conv: Conv2d,
    cnn_bn: BatchNorm,
    lstm1: Lstm,
    lstm2: Lstm,
    lc_lstm1: Lstm,
    lc_lstm2: Lstm,
    lc_conv: Conv2d,
    lc_dense: Dense,
    meta_hidden: Dense,
    meta_out: Dense,
}

impl GateModel {
    pub fn new(classes: SnrClassSet, cfg: &GateConfig, seed: u64) -> Result<Self> {
        classes.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let p = PREFIX;
        let h = cfg.lstm_hidden;
        let cnn_conv = Conv2d::new(&mut s, &format!("{p}cnn.conv"), 1, cfg.cnn_filters, 3, &mut rng)?;
        let cnn_bn = BatchNorm::new(&mut s, &format!("{p}cnn.bn"), cfg.cnn_filters)?;
        let lstm1 = Lstm::new(&mut s, &format!("{p}lstm.l1"), COLS, h, &mut rng)?;
        let lstm2 = Lstm::new(&mut s, &format!("{p}lstm.l2"), h, h, &mut rng)?;
        let lc_lstm1 = Lstm::new(&mut s, &format!("{p}lc.l1"), COLS, h, &mut rng)?;
        let lc_lstm2 = Lstm::new(&mut s, &format!("{p}lc.l2"), h, h, &mut rng)?;
        let lc_conv = Conv2d::new(&mut s, &format!("{p}lc.conv"), 1, cfg.lc_filters, 3, &mut rng)?;
        let lc_dense = Dense::new(&mut s, &format!("{p}lc.dense"), cfg.lc_filters * ROWS * h, cfg.dense, true, &mut rng)?;
        let concat = Self::cnn_features(cfg) + ROWS * h + cfg.dense;
        let meta_hidden = Dense::new(&mut s, &format!("{p}meta.hidden"), concat, cfg.dense, true, &mut rng)?;
        let meta_out = Dense::new(&mut s, &format!("{p}meta.out"), cfg.dense, classes.len(), true, &mut rng)?;
        Ok(Self {
            store: s,
            classes,
            cfg: *cfg,
            cnn_conv,
            cnn_bn,
            lstm1,
            lstm2,
            lc_lstm1,
            lc_lstm2,
            lc_conv,
            lc_dense,
            meta_hidden,
            meta_out,
        })
    }

    fn cnn_features(cfg: &GateConfig) -> usize {
        cfg.cnn_filters * (ROWS / 2) * (COLS / 2)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    /// `[B, 512]` z-scored segments in, `[B, classes]` logits out.
    pub fn logits(&self, tape: &mut Tape<f32>, p: &Bound, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let b = tape.shape(x)[0];
        let h = self.cfg.lstm_hidden;
        let train = ctx.is_train();

        let img = tape.reshape(x, &[b, 1, ROWS, COLS])?;
        let mut c = self.cnn_conv.forward(tape, p, img)?;
        c = tape.relu(c);
        c = self.cnn_bn.forward(tape, &self.store, p, c, ctx)?;
        c = tape.maxpool(c, PoolDims::TwoD)?;
        c = tape.dropout(c, self.cfg.dropout, train, &mut ctx.rng)?;
        let c = tape.reshape(c, &[b, Self::cnn_features(&self.cfg)])?;

        let seq = tape.reshape(x, &[b, ROWS, COLS])?;
        let l = self.lstm1.forward(tape, p, seq, true)?;
        let l = self.lstm2.forward(tape, p, l, true)?;
        let l = tape.reshape(l, &[b, ROWS * h])?;

        let m = self.lc_lstm1.forward(tape, p, seq, true)?;
        let m = self.lc_lstm2.forward(tape, p, m, true)?;
        let m = tape.reshape(m, &[b, 1, ROWS, h])?;
        let m = self.lc_conv.forward(tape, p, m)?;
        let m = tape.relu(m);
        let m = tape.reshape(m, &[b, self.cfg.lc_filters * ROWS * h])?;
        let m = self.lc_dense.forward(tape, p, m)?;
        let m = tape.relu(m);

        let z = tape.concat(&[c, l, m], 1)?;
        let z = self.meta_hidden.forward(tape, p, z)?;
        let z = tape.relu(z);
        Ok(self.meta_out.forward(tape, p, z)?)
    }

    /// Class probabilities for z-scored segments (softmax in `f64`).
    pub fn predict_proba(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for x in inputs {
            if x.len() != SEGMENT_LEN {
                return Err(CoreError::Shape(format!(
                    "gate expects {SEGMENT_LEN} samples, got {}",
                    x.len()
                )));
            }
        }
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(100) {
            let mut tape = Tape::<f32>::new();
            let p = self.store.bind(&mut tape, false);
            let x = tape.constant(batch_tensor(chunk)?);
            let y = self.logits(&mut tape, &p, x, &mut ForwardCtx::infer())?;
            for row in tape.value(y).data().chunks(self.classes.len()) {
                let mut r: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                softmax_in_place(&mut r);
                out.push(r);
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.extend(self.store.entries())?;
        Ok(())
    }
}

/// Index of the largest probability; exact ties go to the lowest index,
/// i.e. the lower SNR level and the more aggressive denoiser.
pub fn choose_class(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Routes one z-scored segment: `(class, probabilities)`.
pub fn gate_infer(model: &GateModel, segment: &[f64]) -> Result<(usize, Vec<f64>)> {
    let probs = model.predict_proba(&[segment.to_vec()])?.remove(0);
    Ok((choose_class(&probs), probs))
}

/// Routes a raw contaminated segment, z-scoring a copy first.
pub fn gate_route(model: &GateModel, raw: &[f64]) -> Result<(usize, Vec<f64>)> {
    let (z, _) = normalize(raw, NormMode::ZScore)?;
    gate_infer(model, &z)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GateTrace {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

impl GateTrace {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("epoch,loss,accuracy\n");
        for (i, (l, a)) in self.epoch_loss.iter().zip(&self.epoch_accuracy).enumerate() {
            text.push_str(&format!("{i},{l},{a}\n"));
        }
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Cross-entropy training on `(z-scored segment, class index)` examples.
pub fn gate_train(
    model: &mut GateModel,
    examples: &[(Vec<f64>, usize)],
    cfg: &GateConfig,
    seed: u64,
) -> Result<GateTrace> {
    if examples.len() < cfg.batch || examples.len() < 2 {
        return Err(CoreError::InvalidDataset(format!(
            "{} gate examples for batch size {}",
            examples.len(),
            cfg.batch
        )));
    }
    if let Some((_, c)) = examples.iter().find(|(_, c)| *c >= model.classes.len()) {
        return Err(CoreError::InvalidDataset(format!(
            "label {c} outside {} classes",
            model.classes.len()
        )));
    }
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = GateTrace::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let classes = model.classes.len();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for idx in order.chunks(cfg.batch.max(2)) {
            if idx.len() < 2 {
                continue;
            }
            let inputs: Vec<&[f64]> = idx.iter().map(|&i| examples[i].0.as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| examples[i].1).collect();
            let mut tape = Tape::<f32>::new();
            let p = model.store.bind(&mut tape, true);
            let x = tape.constant(batch_tensor(&inputs)?);
            let mut ctx = ForwardCtx::new(Mode::Train, ChaCha8Rng::seed_from_u64(rng.random()));
            let logits = model.logits(&mut tape, &p, x, &mut ctx)?;
            for (row, &y) in tape.value(logits).data().chunks(classes).zip(&labels) {
                let probs: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                correct += (choose_class(&probs) == y) as usize;
            }
            let loss = tape.cross_entropy(logits, &labels)?;
            let value = finite_loss(tape.value(loss).data()[0], "gate")?;
            let grads = tape.backward(loss)?;
            let grads = model.store.collect_grads(&p, &grads);
            adam_step(&mut model.store, &mut adam, &grads, "gate")?;
            ctx.apply_bn_updates(&mut model.store);
            loss_sum += value * idx.len() as f64;
            seen += idx.len();
        }
        trace.epoch_loss.push(loss_sum / seen as f64);
        trace.epoch_accuracy.push(correct as f64 / seen as f64);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        let lstm = |i: usize, h: usize| i * 4 * h + h * 4 * h + 4 * h;
        let dense = |i: usize, o: usize| i * o + o;
        let expected = (16 * 9 + 16) + 2 * 16
            + lstm(16, 32) + lstm(32, 32)
            + lstm(16, 32) + lstm(32, 32) + (8 * 9 + 8) + dense(8 * 32 * 32, 64)
            + dense(2048 + 1024 + 64, 64) + dense(64, 2);
        let m = GateModel::new(SnrClassSet::default(), &GateConfig::default(), 0).unwrap();
        assert_eq!(m.num_parameters(), expected);
        assert_eq!(expected, 754706);
    }

    #[test]
    fn ties_go_to_lower_snr() {
        assert_eq!(choose_class(&[0.5, 0.5]), 0);
        assert_eq!(choose_class(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(choose_class(&[0.1, 0.9]), 1);
    }

    #[test]
    fn class_set_validation() {
        assert!(SnrClassSet::new(vec![2.0, -7.0]).is_err());
        assert!(SnrClassSet::new(vec![-8.0, 2.0]).is_err());
        assert!(SnrClassSet::new(vec![-7.0, -2.0, 2.0]).is_ok());
    }
}
