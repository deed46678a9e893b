//! Parameterised building blocks composed from tape primitives.
//!
//! Layers only hold [`ParamId`]s; tensors live in the owning model's
//! [`ParamStore`]. Forward passes are generic over the tape scalar so the
//! same code runs in `f32` for training and `f64` for gradient checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, AutogradError, Result};
use crate::ops::norm::NormAxis;
use crate::params::{fan_in_uniform, uniform, BufferId, Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-forward state: mode, dropout randomness and pending batch-norm updates.
pub struct ForwardCtx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
    bn_updates: Vec<(BnRunning, Vec<f32>, Vec<f32>)>,
}

impl ForwardCtx {
    pub fn new(mode: Mode, rng: ChaCha8Rng) -> Self {
        Self {
            mode,
            rng,
            bn_updates: Vec::new(),
        }
    }

    pub fn infer() -> Self {
        use rand::SeedableRng;
        Self::new(Mode::Infer, ChaCha8Rng::seed_from_u64(0))
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Folds batch statistics gathered in train mode into the running buffers.
    pub fn apply_bn_updates(&mut self, store: &mut ParamStore) {
        for (bn, mean, var) in self.bn_updates.drain(..) {
            let m = bn.momentum;
            for (r, b) in store.buffer_mut(bn.mean).data_mut().iter_mut().zip(&mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in store.buffer_mut(bn.var).data_mut().iter_mut().zip(&var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }

    pub fn pending_bn_updates(&self) -> usize {
        self.bn_updates.len()
    }
}

/// Affine map over the last axis: `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.register(
            &format!("{name}.weight"),
            fan_in_uniform(&[in_dim, out_dim], in_dim, rng),
        )?;
        let bias = if bias {
            Some(store.register(&format!("{name}.bias"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.last() != Some(&self.in_dim) {
            return shape_err(format!("dense expects last dim {}, got {shape:?}", self.in_dim));
        }
        let rows = tape.value(x).numel() / self.in_dim;
        let flat = if shape.len() == 2 {
            x
        } else {
            tape.reshape(x, &[rows, self.in_dim])?
        };
        let mut y = tape.matmul(flat, p[self.weight])?;
        if let Some(b) = self.bias {
            y = tape.bias_add(y, p[b], 1)?;
        }
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out = shape;
            *out.last_mut().unwrap() = self.out_dim;
            tape.reshape(y, &out)
        }
    }
}

/// Same-padded 1-D convolution over `[B, C, L]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let kernel = store.register(
            &format!("{name}.kernel"),
            fan_in_uniform(&[c_out, c_in, k], c_in * k, rng),
        )?;
        let bias = store.register(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Self { kernel, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv1d(x, p[self.kernel], Some(p[self.bias]))
    }
}

/// Same-padded 2-D convolution over `[B, C, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let kernel = store.register(
            &format!("{name}.kernel"),
            fan_in_uniform(&[c_out, c_in, k, k], c_in * k * k, rng),
        )?;
        let bias = store.register(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Self { kernel, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.kernel], Some(p[self.bias]))
    }
}

#[derive(Clone, Copy, Debug)]
struct BnRunning {
    mean: BufferId,
    var: BufferId,
    momentum: f32,
}

/// Batch normalisation over axis 1 of `[B, C, ...]`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    running: BnRunning,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f32 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.register(&format!("{name}.gamma"), Tensor::full(&[channels], 1.0))?;
        let beta = store.register(&format!("{name}.beta"), Tensor::zeros(&[channels]))?;
        let mean = store.register_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?;
        let var = store.register_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0))?;
        Ok(Self {
            gamma,
            beta,
            running: BnRunning {
                mean,
                var,
                momentum: Self::MOMENTUM,
            },
            eps: Self::EPS,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore,
        p: &Bound,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let normed = match ctx.mode {
            Mode::Train => {
                let batch = tape.shape(x)[0];
                if batch < 2 {
                    return Err(AutogradError::InvalidBatch(format!(
                        "batch norm in train mode needs at least 2 samples, got {batch}"
                    )));
                }
                let (y, m) = tape.standardize(x, NormAxis::Channel, T::lit(self.eps))?;
                let unbias = m.count as f64 / (m.count as f64 - 1.0).max(1.0);
                let mean = m.mean.iter().map(|v| v.to_f32().unwrap_or(0.0)).collect();
                let var = m
                    .var
                    .iter()
                    .map(|v| (v.to_f64().unwrap_or(0.0) * unbias) as f32)
                    .collect();
                ctx.bn_updates.push((self.running, mean, var));
                y
            }
            Mode::Infer => {
                let rm = store.buffer(self.running.mean);
                let rv = store.buffer(self.running.var);
                let shift = Tensor::<T>::from_vec(rm.data().iter().map(|&m| T::lit(-m as f64)).collect());
                let scale = Tensor::<T>::from_vec(
                    rv.data()
                        .iter()
                        .map(|&v| T::lit(1.0 / (v as f64 + self.eps).sqrt()))
                        .collect(),
                );
                let shift = tape.constant(shift);
                let scale = tape.constant(scale);
                let centered = tape.bias_add(x, shift, 1)?;
                tape.bias_mul(centered, scale, 1)?
            }
        };
        let scaled = tape.bias_mul(normed, p[self.gamma], 1)?;
        tape.bias_add(scaled, p[self.beta], 1)
    }
}

/// Layer normalisation over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.register(&format!("{name}.gamma"), Tensor::full(&[dim], 1.0))?;
        let beta = store.register(&format!("{name}.beta"), Tensor::zeros(&[dim]))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let axis = tape.shape(x).len() - 1;
        let (y, _) = tape.standardize(x, NormAxis::Last, T::lit(Self::EPS))?;
        let y = tape.bias_mul(y, p[self.gamma], axis)?;
        tape.bias_add(y, p[self.beta], axis)
    }
}

/// Single LSTM layer over `[B, T, F]`, gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let limit = 1.0 / (hidden as f64).sqrt();
        let w_input = store.register(
            &format!("{name}.w_input"),
            uniform(&[input_size, 4 * hidden], limit, rng),
        )?;
        let w_hidden = store.register(
            &format!("{name}.w_hidden"),
            uniform(&[hidden, 4 * hidden], limit, rng),
        )?;
        let bias = store.register(&format!("{name}.bias"), Tensor::zeros(&[4 * hidden]))?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_size,
            hidden,
        })
    }

    /// Runs the recurrence from a zero state; returns `[B, T, H]` or the last `[B, H]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        return_sequence: bool,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.input_size {
            return shape_err(format!(
                "lstm expects [B, T, {}], got {shape:?}",
                self.input_size
            ));
        }
        let (batch, steps, feat) = (shape[0], shape[1], shape[2]);
        let h = self.hidden;
        let flat = tape.reshape(x, &[batch * steps, feat])?;
        let projected = tape.matmul(flat, p[self.w_input])?;
        let projected = tape.bias_add(projected, p[self.bias], 1)?;
        let projected = tape.reshape(projected, &[batch, steps, 4 * h])?;
        let mut hidden: Option<Var> = None;
        let mut cell: Option<Var> = None;
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = tape.narrow(projected, 1, t, 1)?;
            let mut gates = tape.reshape(xt, &[batch, 4 * h])?;
            if let Some(hp) = hidden {
                let rec = tape.matmul(hp, p[self.w_hidden])?;
                gates = tape.add(gates, rec)?;
            }
            let i = tape.narrow(gates, 1, 0, h)?;
            let i = tape.sigmoid(i);
            let f = tape.narrow(gates, 1, h, h)?;
            let f = tape.sigmoid(f);
            let g = tape.narrow(gates, 1, 2 * h, h)?;
            let g = tape.tanh(g);
            let o = tape.narrow(gates, 1, 3 * h, h)?;
            let o = tape.sigmoid(o);
            let ig = tape.mul(i, g)?;
            let c = match cell {
                Some(cp) => {
                    let fc = tape.mul(f, cp)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(c);
            let ht = tape.mul(o, tc)?;
            cell = Some(c);
            hidden = Some(ht);
            if return_sequence {
                outputs.push(tape.reshape(ht, &[batch, 1, h])?);
            }
        }
        match (return_sequence, hidden) {
            (true, _) => tape.concat(&outputs, 1),
            (false, Some(ht)) => Ok(ht),
            (false, None) => shape_err("lstm over an empty sequence"),
        }
    }
}

/// Multi-head scaled dot-product self-attention over `[B, L, D]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return shape_err(format!("model dim {dim} not divisible by {heads} heads"));
        }
        Ok(Self {
            query: Dense::new(store, &format!("{name}.query"), dim, dim, true, rng)?,
            key: Dense::new(store, &format!("{name}.key"), dim, dim, true, rng)?,
            value: Dense::new(store, &format!("{name}.value"), dim, dim, true, rng)?,
            output: Dense::new(store, &format!("{name}.output"), dim, dim, true, rng)?,
            heads,
            dim,
        })
    }

    fn split_heads<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, batch: usize, len: usize) -> Result<Var> {
        let dh = self.dim / self.heads;
        let x = tape.reshape(x, &[batch, len, self.heads, dh])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[batch * self.heads, len, dh])
    }

    /// Returns the projected output and the `[B * heads, L, L]` attention weights.
    pub fn forward_with_weights<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.dim {
            return shape_err(format!("attention expects [B, L, {}], got {shape:?}", self.dim));
        }
        let (batch, len) = (shape[0], shape[1]);
        let dh = self.dim / self.heads;
        let q = self.query.forward(tape, p, x)?;
        let k = self.key.forward(tape, p, x)?;
        let v = self.value.forward(tape, p, x)?;
        let q = self.split_heads(tape, q, batch, len)?;
        let k = self.split_heads(tape, k, batch, len)?;
        let v = self.split_heads(tape, v, batch, len)?;
        // Scaling queries rather than the L x L scores is cheaper and equivalent.
        let q = tape.scale(q, T::lit(1.0 / (dh as f64).sqrt()));
        let scores = tape.bmm(q, k, false, true)?;
        let weights = tape.softmax(scores);
        let ctx = tape.bmm(weights, v, false, false)?;
        let ctx = tape.reshape(ctx, &[batch, self.heads, len, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[batch, len, self.dim])?;
        let out = self.output.forward(tape, p, ctx)?;
        Ok((out, weights))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(tape, p, x)?.0)
    }
}

/// Post-norm transformer encoder layer: `LN(x + MHA(x))` then `LN(y + FF(y))`.
#[derive(Clone, Debug)]
pub struct TransformerEncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff_in: Dense,
    pub ff_out: Dense,
    pub norm2: LayerNorm,
}

impl TransformerEncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            ff_in: Dense::new(store, &format!("{name}.ff_in"), dim, ff_dim, true, rng)?,
            ff_out: Dense::new(store, &format!("{name}.ff_out"), ff_dim, dim, true, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let a = self.attention.forward(tape, p, x)?;
        let y = tape.add(x, a)?;
        let y = self.norm1.forward(tape, p, y)?;
        let f = self.ff_in.forward(tape, p, y)?;
        let f = tape.relu(f);
        let f = self.ff_out.forward(tape, p, f)?;
        let z = tape.add(y, f)?;
        self.norm2.forward(tape, p, z)
    }
}
