//! Same-padded stride-1 convolutions, pooling and upsampling.
//!
//! Convolutions lower to im2col + gemm per batch element. Column buffers
//! are rebuilt during the reverse pass instead of being kept alive.

use crate::error::{shape_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct Conv1dSpec {
    x: Var,
    w: Var,
    b: Option<Var>,
    batch: usize,
    c_in: usize,
    c_out: usize,
    len: usize,
    k: usize,
}

impl Conv1dSpec {
    pub(crate) fn parents(&self) -> Vec<Var> {
        let mut p = vec![self.x, self.w];
        p.extend(self.b);
        p
    }
}

pub(crate) struct Conv2dSpec {
    x: Var,
    w: Var,
    b: Option<Var>,
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    wd: usize,
    kh: usize,
    kw: usize,
}

impl Conv2dSpec {
    pub(crate) fn parents(&self) -> Vec<Var> {
        let mut p = vec![self.x, self.w];
        p.extend(self.b);
        p
    }
}

/// Pooling window geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolDims {
    /// Over the last axis.
    OneD,
    /// Over the last two axes.
    TwoD,
}

fn im2col_1d<T: Scalar>(x: &[T], c_in: usize, len: usize, k: usize, cols: &mut [T]) {
    let pad = k / 2;
    for ci in 0..c_in {
        let row = &x[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let dst = &mut cols[(ci * k + kk) * len..(ci * k + kk + 1) * len];
            for (t, d) in dst.iter_mut().enumerate() {
                let src = t as isize + kk as isize - pad as isize;
                *d = if src >= 0 && (src as usize) < len {
                    row[src as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

fn col2im_1d<T: Scalar>(cols: &[T], c_in: usize, len: usize, k: usize, dx: &mut [T]) {
    let pad = k / 2;
    for ci in 0..c_in {
        for kk in 0..k {
            let src = &cols[(ci * k + kk) * len..(ci * k + kk + 1) * len];
            for (t, &v) in src.iter().enumerate() {
                let pos = t as isize + kk as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    dx[ci * len + pos as usize] += v;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col_2d<T: Scalar>(x: &[T], c_in: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [T]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = h * w;
    for ci in 0..c_in {
        for a in 0..kh {
            for b in 0..kw {
                let row = (ci * kh + a) * kw + b;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for i in 0..h {
                    let si = i as isize + a as isize - ph as isize;
                    for j in 0..w {
                        let sj = j as isize + b as isize - pw as isize;
                        dst[i * w + j] = if si >= 0 && (si as usize) < h && sj >= 0 && (sj as usize) < w {
                            x[ci * plane + si as usize * w + sj as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_2d<T: Scalar>(cols: &[T], c_in: usize, h: usize, w: usize, kh: usize, kw: usize, dx: &mut [T]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = h * w;
    for ci in 0..c_in {
        for a in 0..kh {
            for b in 0..kw {
                let row = (ci * kh + a) * kw + b;
                let src = &cols[row * plane..(row + 1) * plane];
                for i in 0..h {
                    let si = i as isize + a as isize - ph as isize;
                    if si < 0 || si as usize >= h {
                        continue;
                    }
                    for j in 0..w {
                        let sj = j as isize + b as isize - pw as isize;
                        if sj >= 0 && (sj as usize) < w {
                            dx[ci * plane + si as usize * w + sj as usize] += src[i * w + j];
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, row) in out.chunks_mut(plane).enumerate() {
        for v in row {
            *v += bias[c];
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// `[B, C_in, L]` input, `[C_out, C_in, K]` kernel, optional `[C_out]` bias.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[1] {
            return shape_err(format!("conv1d: input {xs:?} with kernel {ws:?}"));
        }
        if ws[2] % 2 == 0 {
            return shape_err(format!("conv1d: kernel size {} must be odd", ws[2]));
        }
        if let Some(b) = b {
            if self.value(b).numel() != ws[0] {
                return shape_err(format!("conv1d: bias {:?} for {} filters", self.shape(b), ws[0]));
            }
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); batch * c_out * len];
        let mut cols = vec![T::zero(); c_in * k * len];
        for bi in 0..batch {
            im2col_1d(&xv[bi * c_in * len..(bi + 1) * c_in * len], c_in, len, k, &mut cols);
            let o = &mut out[bi * c_out * len..(bi + 1) * c_out * len];
            gemm(c_out, c_in * k, len, wv, false, &cols, false, o, false);
            if let Some(b) = b {
                add_channel_bias(o, self.value(b).data(), len);
            }
        }
        let spec = Conv1dSpec {
            x,
            w,
            b,
            batch,
            c_in,
            c_out,
            len,
            k,
        };
        Ok(self.push(
            Tensor::from_parts(vec![batch, c_out, len], out),
            Op::Conv1d(spec),
        ))
    }

    /// `[B, C_in, H, W]` input, `[C_out, C_in, KH, KW]` kernel, optional bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] {
            return shape_err(format!("conv2d: input {xs:?} with kernel {ws:?}"));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return shape_err(format!("conv2d: kernel {:?} must be odd", &ws[2..]));
        }
        if let Some(b) = b {
            if self.value(b).numel() != ws[0] {
                return shape_err(format!("conv2d: bias {:?} for {} filters", self.shape(b), ws[0]));
            }
        }
        let (batch, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        let plane = h * wd;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); batch * c_out * plane];
        let mut cols = vec![T::zero(); c_in * kh * kw * plane];
        for bi in 0..batch {
            im2col_2d(&xv[bi * c_in * plane..(bi + 1) * c_in * plane], c_in, h, wd, kh, kw, &mut cols);
            let o = &mut out[bi * c_out * plane..(bi + 1) * c_out * plane];
            gemm(c_out, c_in * kh * kw, plane, wv, false, &cols, false, o, false);
            if let Some(b) = b {
                add_channel_bias(o, self.value(b).data(), plane);
            }
        }
        let spec = Conv2dSpec {
            x,
            w,
            b,
            batch,
            c_in,
            c_out,
            h,
            wd,
            kh,
            kw,
        };
        Ok(self.push(
            Tensor::from_parts(vec![batch, c_out, h, wd], out),
            Op::Conv2d(spec),
        ))
    }

    /// Max pooling with window and stride 2. Ties route to the first index.
    pub fn maxpool(&mut self, x: Var, dims: PoolDims) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let src = self.value(x).data();
        match dims {
            PoolDims::OneD => {
                let Some(&len) = shape.last() else {
                    return shape_err("maxpool on rank-0 tensor");
                };
                if len % 2 != 0 {
                    return shape_err(format!("maxpool: odd length {len}"));
                }
                let half = len / 2;
                let rows = src.len() / len.max(1);
                let mut data = Vec::with_capacity(rows * half);
                let mut argmax = Vec::with_capacity(rows * half);
                for r in 0..rows {
                    for t in 0..half {
                        let i = r * len + 2 * t;
                        let pick = if src[i + 1] > src[i] { i + 1 } else { i };
                        data.push(src[pick]);
                        argmax.push(pick);
                    }
                }
                let mut out_shape = shape;
                *out_shape.last_mut().unwrap() = half;
                Ok(self.push(Tensor::from_parts(out_shape, data), Op::MaxPool { x, argmax }))
            }
            PoolDims::TwoD => {
                let r = shape.len();
                if r < 2 || shape[r - 1] % 2 != 0 || shape[r - 2] % 2 != 0 {
                    return shape_err(format!("maxpool2d: need even trailing dims, got {shape:?}"));
                }
                let (h, w) = (shape[r - 2], shape[r - 1]);
                let (oh, ow) = (h / 2, w / 2);
                let planes = src.len() / (h * w).max(1);
                let mut data = Vec::with_capacity(planes * oh * ow);
                let mut argmax = Vec::with_capacity(planes * oh * ow);
                for p in 0..planes {
                    let base = p * h * w;
                    for i in 0..oh {
                        for j in 0..ow {
                            let cands = [
                                base + 2 * i * w + 2 * j,
                                base + 2 * i * w + 2 * j + 1,
                                base + (2 * i + 1) * w + 2 * j,
                                base + (2 * i + 1) * w + 2 * j + 1,
                            ];
                            let mut pick = cands[0];
                            for &c in &cands[1..] {
                                if src[c] > src[pick] {
                                    pick = c;
                                }
                            }
                            data.push(src[pick]);
                            argmax.push(pick);
                        }
                    }
                }
                let mut out_shape = shape;
                out_shape[r - 2] = oh;
                out_shape[r - 1] = ow;
                Ok(self.push(Tensor::from_parts(out_shape, data), Op::MaxPool { x, argmax }))
            }
        }
    }

    /// Nearest-neighbour upsampling along the last axis.
    pub fn upsample1d(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return shape_err("upsample factor must be positive");
        }
        let mut shape = self.shape(x).to_vec();
        let Some(last) = shape.last_mut() else {
            return shape_err("upsample on rank-0 tensor");
        };
        *last *= factor;
        let data: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, factor))
            .collect();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Upsample1d { x, factor }))
    }
}

pub(crate) fn conv1d_backward<T: Scalar>(
    tape: &Tape<T>,
    s: &Conv1dSpec,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let (c_in, c_out, len, k) = (s.c_in, s.c_out, s.len, s.k);
    let xv = tape.value(s.x).data();
    let wv = tape.value(s.w).data();
    if let Some(b) = s.b {
        sink.with(b, |buf| {
            for bi in 0..s.batch {
                for (c, d) in buf.iter_mut().enumerate() {
                    let base = (bi * c_out + c) * len;
                    *d += g[base..base + len].iter().copied().sum::<T>();
                }
            }
        });
    }
    let need_w = tape.requires_grad(s.w);
    let need_x = tape.requires_grad(s.x);
    let mut cols = vec![T::zero(); c_in * k * len];
    if need_w {
        sink.with(s.w, |buf| {
            for bi in 0..s.batch {
                im2col_1d(&xv[bi * c_in * len..(bi + 1) * c_in * len], c_in, len, k, &mut cols);
                let gb = &g[bi * c_out * len..(bi + 1) * c_out * len];
                gemm(c_out, len, c_in * k, gb, false, &cols, true, buf, true);
            }
        });
    }
    if need_x {
        sink.with(s.x, |buf| {
            for bi in 0..s.batch {
                let gb = &g[bi * c_out * len..(bi + 1) * c_out * len];
                gemm(c_in * k, c_out, len, wv, true, gb, false, &mut cols, false);
                col2im_1d(&cols, c_in, len, k, &mut buf[bi * c_in * len..(bi + 1) * c_in * len]);
            }
        });
    }
}

pub(crate) fn conv2d_backward<T: Scalar>(
    tape: &Tape<T>,
    s: &Conv2dSpec,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let plane = s.h * s.wd;
    let (c_in, c_out) = (s.c_in, s.c_out);
    let ksz = c_in * s.kh * s.kw;
    let xv = tape.value(s.x).data();
    let wv = tape.value(s.w).data();
    if let Some(b) = s.b {
        sink.with(b, |buf| {
            for bi in 0..s.batch {
                for (c, d) in buf.iter_mut().enumerate() {
                    let base = (bi * c_out + c) * plane;
                    *d += g[base..base + plane].iter().copied().sum::<T>();
                }
            }
        });
    }
    let mut cols = vec![T::zero(); ksz * plane];
    if tape.requires_grad(s.w) {
        sink.with(s.w, |buf| {
            for bi in 0..s.batch {
                im2col_2d(
                    &xv[bi * c_in * plane..(bi + 1) * c_in * plane],
                    c_in,
                    s.h,
                    s.wd,
                    s.kh,
                    s.kw,
                    &mut cols,
                );
                let gb = &g[bi * c_out * plane..(bi + 1) * c_out * plane];
                gemm(c_out, plane, ksz, gb, false, &cols, true, buf, true);
            }
        });
    }
    if tape.requires_grad(s.x) {
        sink.with(s.x, |buf| {
            for bi in 0..s.batch {
                let gb = &g[bi * c_out * plane..(bi + 1) * c_out * plane];
                gemm(ksz, c_out, plane, wv, true, gb, false, &mut cols, false);
                col2im_2d(
                    &cols,
                    c_in,
                    s.h,
                    s.wd,
                    s.kh,
                    s.kw,
                    &mut buf[bi * c_in * plane..(bi + 1) * c_in * plane],
                );
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv1d(x: &[f64], w: &[f64], bias: f64) -> Vec<f64> {
        let k = w.len() as isize;
        let pad = k / 2;
        (0..x.len() as isize)
            .map(|t| {
                let mut acc = bias;
                for kk in 0..k {
                    let src = t + kk - pad;
                    if src >= 0 && (src as usize) < x.len() {
                        acc += w[kk as usize] * x[src as usize];
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn conv1d_zero_input_gives_zero_output() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 6]));
        let w = tape.constant(Tensor::new(&[3, 2, 3], (0..18).map(|i| i as f64 - 4.0).collect()).unwrap());
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape.conv1d(x, w, Some(b)).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let data = vec![0.3, -1.0, 2.5, 4.0, 0.0, 7.0];
        let x = tape.constant(Tensor::new(&[1, 1, 6], data.clone()).unwrap());
        let w = tape.constant(Tensor::new(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap());
        let y = tape.conv1d(x, w, None).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn conv1d_matches_sliding_dot_product() {
        let x: Vec<f64> = (0..8).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let w = vec![0.25, -0.5, 1.75];
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::new(&[1, 1, 8], x.clone()).unwrap());
        let wv = tape.constant(Tensor::new(&[1, 1, 3], w.clone()).unwrap());
        let bv = tape.constant(Tensor::from_vec(vec![0.1]));
        let y = tape.conv1d(xv, wv, Some(bv)).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(naive_conv1d(&x, &w, 0.1)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_rejects_even_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 2]));
        assert!(tape.conv1d(x, w, None).is_err());
        let w = tape.constant(Tensor::zeros(&[1, 2, 3]));
        assert!(tape.conv1d(x, w, None).is_err());
    }

    #[test]
    fn conv2d_identity_and_zero() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..16).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = tape.constant(Tensor::new(&[1, 1, 4, 4], data.clone()).unwrap());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = tape.constant(Tensor::new(&[1, 1, 3, 3], k).unwrap());
        let y = tape.conv2d(x, w, None).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);

        let z = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let y = tape.conv2d(z, w, None).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4).collect();
        let k: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) * 0.3).collect();
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::new(&[1, 1, 4, 4], x.clone()).unwrap());
        let wv = tape.constant(Tensor::new(&[1, 1, 3, 3], k.clone()).unwrap());
        let y = tape.conv2d(xv, wv, None).unwrap();
        for i in 0..4i32 {
            for j in 0..4i32 {
                let mut acc = 0.0;
                for a in 0..3i32 {
                    for b in 0..3i32 {
                        let (si, sj) = (i + a - 1, j + b - 1);
                        if (0..4).contains(&si) && (0..4).contains(&sj) {
                            acc += k[(a * 3 + b) as usize] * x[(si * 4 + sj) as usize];
                        }
                    }
                }
                let got = tape.value(y).data()[(i * 4 + j) as usize];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pool_and_upsample() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 3.0, 2.0, 2.0]));
        let p = tape.maxpool(x, PoolDims::OneD).unwrap();
        assert_eq!(tape.value(p).data(), &[3.0, 2.0]);
        let u = tape.constant(Tensor::from_vec(vec![5.0, 7.0]));
        let up = tape.upsample1d(u, 2).unwrap();
        assert_eq!(tape.value(up).data(), &[5.0, 5.0, 7.0, 7.0]);
        let back = tape.upsample1d(p, 2).unwrap();
        assert_eq!(tape.value(back).numel(), 4);
        let odd = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(tape.maxpool(odd, PoolDims::OneD).is_err());
    }

    #[test]
    fn maxpool_tie_routes_gradient_to_first() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![2.0, 2.0, 1.0, 4.0]));
        let p = tape.maxpool(x, PoolDims::OneD).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool2d_halves_both_axes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 8., 1.]).unwrap());
        let p = tape.maxpool(x, PoolDims::TwoD).unwrap();
        assert_eq!(tape.shape(p), &[1, 1, 1, 2]);
        assert_eq!(tape.value(p).data(), &[5., 8.]);
    }
}
