use rand::Rng;

use crate::error::{shape_err, AutogradError, Result};
use crate::scalar::Scalar;
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{split_axis, Tensor};

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| f(e)).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |e| e * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |e| e + c, Op::AddConst(x))
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if c.shape() != self.shape(x) {
            return shape_err(format!("add_const: {:?} vs {:?}", self.shape(x), c.shape()));
        }
        let data = zip_map(self.value(x).data(), c.data(), |a, b| a + b);
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        Ok(self.push(out, Op::AddConst(x)))
    }

    /// Multiplies elementwise by a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if c.shape() != self.shape(x) {
            return shape_err(format!("mul_const: {:?} vs {:?}", self.shape(x), c.shape()));
        }
        let data = zip_map(self.value(x).data(), c.data(), |a, b| a * b);
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        Ok(self.push(out, Op::MulConst(x, c.data().to_vec())))
    }

    fn channel_dims(&self, x: Var, v: Var, axis: usize, what: &str) -> Result<(usize, usize, usize)> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return shape_err(format!("{what}: axis {axis} out of range for {shape:?}"));
        }
        let dims = split_axis(shape, axis);
        if self.value(v).numel() != dims.1 {
            return shape_err(format!(
                "{what}: {} channels expected along axis {axis} of {shape:?}, got {}",
                dims.1,
                self.value(v).numel()
            ));
        }
        Ok(dims)
    }

    /// `x + bias` with `bias` broadcast along `axis`.
    pub fn bias_add(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let dims = self.channel_dims(x, bias, axis, "bias_add")?;
        let (outer, ch, inner) = dims;
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for d in &mut data[base..base + inner] {
                    *d += b[c];
                }
            }
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        Ok(self.push(out, Op::BiasAdd { x, bias, dims }))
    }

    /// `x * scale` with `scale` broadcast along `axis`.
    pub fn bias_mul(&mut self, x: Var, scale: Var, axis: usize) -> Result<Var> {
        let dims = self.channel_dims(x, scale, axis, "bias_mul")?;
        let (outer, ch, inner) = dims;
        let s = self.value(scale).data();
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for d in &mut data[base..base + inner] {
                    *d *= s[c];
                }
            }
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        Ok(self.push(out, Op::BiasMul { x, scale, dims }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            |e| if e > T::zero() { e } else { e * slope },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.tanh(), Op::Tanh(x))
    }

    /// Softmax over the last axis, stabilised by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = *v.shape().last().unwrap_or(&1);
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(out, Op::Softmax(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::from_usize(v.numel().max(1)).unwrap();
        let s: T = v.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(x))
    }

    /// Inverted dropout. Identity unless `train`; kept units are scaled by `1/(1-rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutogradError::InvalidArgument(format!("dropout rate {rate}")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let shape = self.shape(x).to_vec();
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mask = Tensor::from_parts(shape, mask);
        self.mul_const(x, &mask)
    }
}

pub fn sigmoid<T: Scalar>(e: T) -> T {
    if e >= T::zero() {
        T::one() / (T::one() + (-e).fast_exp())
    } else {
        let z = e.fast_exp();
        z / (T::one() + z)
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).fast_exp();
        total += *v;
    }
    let inv = T::one() / total;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub(crate) fn reduce_to_channels<T: Scalar>(g: &[T], dims: (usize, usize, usize), buf: &mut [T]) {
    let (outer, ch, inner) = dims;
    for o in 0..outer {
        for (c, d) in buf.iter_mut().enumerate().take(ch) {
            let base = (o * ch + c) * inner;
            *d += g[base..base + inner].iter().copied().sum::<T>();
        }
    }
}

pub(crate) fn bias_mul_backward<T: Scalar>(
    g: &[T],
    xv: &[T],
    sv: &[T],
    dims: (usize, usize, usize),
    x: Var,
    scale: Var,
    sink: &mut GradSink<'_, T>,
) {
    let (outer, ch, inner) = dims;
    sink.with(x, |buf| {
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    buf[i] += g[i] * sv[c];
                }
            }
        }
    });
    sink.with(scale, |buf| {
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                let mut acc = T::zero();
                for i in base..base + inner {
                    acc += g[i] * xv[i];
                }
                buf[c] += acc;
            }
        }
    });
}

pub(crate) fn softmax_backward<T: Scalar>(g: &[T], y: &[T], n: usize, buf: &mut [T]) {
    for ((gr, yr), dr) in g.chunks(n).zip(y.chunks(n)).zip(buf.chunks_mut(n)) {
        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
        for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
            *d += yi * (gi - dot);
        }
    }
}
