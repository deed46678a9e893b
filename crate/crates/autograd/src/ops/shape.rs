use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{split_axis, Tensor};

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err(format!("invalid permutation {perm:?} for {shape:?}"));
        }
        let data = permute_data(self.value(x).data(), &shape, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return shape_err(format!("narrow({axis}, {start}, {len}) out of range for {shape:?}"));
        }
        let dims = split_axis(&shape, axis);
        let (outer, dim, inner) = dims;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Narrow { x, dims, start }))
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of zero tensors");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err(format!("concat axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err(format!("concat: {s:?} incompatible with {base:?} on axis {axis}"));
            }
            sizes.push((p, s[axis]));
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(p, d) in &sizes {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                parts: sizes,
                outer,
                inner,
            },
        ))
    }
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn permute_data<T: Copy>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn narrow_backward<T: Scalar>(
    g: &[T],
    dims: (usize, usize, usize),
    start: usize,
    out_shape: &[usize],
    buf: &mut [T],
) {
    let (outer, dim, inner) = dims;
    let len = g.len() / (outer * inner).max(1);
    debug_assert_eq!(out_shape.iter().product::<usize>(), g.len());
    for o in 0..outer {
        let dst = (o * dim + start) * inner;
        let src = o * len * inner;
        for (d, &gi) in buf[dst..dst + len * inner].iter_mut().zip(&g[src..src + len * inner]) {
            *d += gi;
        }
    }
}

pub(crate) fn concat_backward<T: Scalar>(
    g: &[T],
    parts: &[(Var, usize)],
    outer: usize,
    inner: usize,
    sink: &mut GradSink<'_, T>,
) {
    let total: usize = parts.iter().map(|(_, d)| d).sum();
    let mut offset = 0;
    for &(p, d) in parts {
        sink.with(p, |buf| {
            for o in 0..outer {
                let src = (o * total + offset) * inner;
                for (b, &gi) in buf[o * d * inner..(o + 1) * d * inner]
                    .iter_mut()
                    .zip(&g[src..src + d * inner])
                {
                    *b += gi;
                }
            }
        });
        offset += d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes_matrix() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let y = tape.permute(x, &[1, 0]).unwrap();
        assert_eq!(tape.shape(y), &[3, 2]);
        assert_eq!(tape.value(y).data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn permute_rank4_round_trip() {
        let shape = [2, 3, 4, 5];
        let data: Vec<usize> = (0..120).collect();
        let p = permute_data(&data, &shape, &[0, 2, 1, 3]);
        let back = permute_data(&p, &[2, 4, 3, 5], &inverse_perm(&[0, 2, 1, 3]));
        assert_eq!(back, data);
        // element (0, 1, 2, 3) lands at (0, 2, 1, 3)
        assert_eq!(p[(2 * 3 + 1) * 5 + 3], data[20 + 2 * 5 + 3]);
    }

    #[test]
    fn narrow_and_concat_invert() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2, 4], (0..8).map(f64::from).collect()).unwrap());
        let a = tape.narrow(x, 1, 0, 1).unwrap();
        let b = tape.narrow(x, 1, 1, 3).unwrap();
        assert_eq!(tape.value(b).data(), &[1., 2., 3., 5., 6., 7.]);
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c), tape.value(x));
        assert!(tape.narrow(x, 1, 2, 3).is_err());
    }
}
