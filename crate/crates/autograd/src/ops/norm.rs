use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::{split_axis, Tensor};

/// Which elements share normalisation statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormAxis {
    /// Each row of the last axis (layer norm, per-segment z-score).
    Last,
    /// Each channel of axis 1, pooled over batch and trailing axes (batch norm).
    Channel,
}

pub(crate) struct StandardizeSpec<T> {
    pub(crate) x: Var,
    axis: NormAxis,
    dims: (usize, usize, usize),
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Per-group moments from a standardisation pass (population variance).
#[derive(Clone, Debug)]
pub struct Moments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per group.
    pub count: usize,
}

fn for_each_group<T: Scalar>(
    axis: NormAxis,
    dims: (usize, usize, usize),
    data: &[T],
    mut f: impl FnMut(usize, usize),
) {
    let (outer, ch, inner) = dims;
    match axis {
        NormAxis::Last => {
            for i in 0..data.len() {
                f(i / inner, i);
            }
        }
        NormAxis::Channel => {
            for o in 0..outer {
                for c in 0..ch {
                    let base = (o * ch + c) * inner;
                    for i in base..base + inner {
                        f(c, i);
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Subtracts the group mean and divides by `sqrt(var + eps)`.
    pub fn standardize(&mut self, x: Var, axis: NormAxis, eps: T) -> Result<(Var, Moments<T>)> {
        let shape = self.shape(x).to_vec();
        let (dims, groups, count) = match axis {
            NormAxis::Last => {
                let Some(&n) = shape.last() else {
                    return shape_err("standardize on rank-0 tensor");
                };
                let rows = self.value(x).numel() / n.max(1);
                ((rows, 1, n), rows, n)
            }
            NormAxis::Channel => {
                if shape.len() < 2 {
                    return shape_err(format!("channel standardize needs rank >= 2, got {shape:?}"));
                }
                let d = split_axis(&shape, 1);
                (d, d.1, d.0 * d.2)
            }
        };
        if count == 0 {
            return shape_err("standardize over empty groups");
        }
        let xv = self.value(x).data();
        let n = T::from_usize(count).unwrap();
        let mut mean = vec![T::zero(); groups];
        for_each_group(axis, dims, xv, |g, i| mean[g] += xv[i]);
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![T::zero(); groups];
        for_each_group(axis, dims, xv, |g, i| {
            let d = xv[i] - mean[g];
            var[g] += d * d;
        });
        for v in &mut var {
            *v /= n;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        for_each_group(axis, dims, xv, |g, i| xhat[i] = (xv[i] - mean[g]) * inv_std[g]);
        let out = Tensor::from_parts(shape, xhat.clone());
        let spec = StandardizeSpec {
            x,
            axis,
            dims,
            xhat,
            inv_std,
        };
        let v = self.push(out, Op::Standardize(spec));
        Ok((v, Moments { mean, var, count }))
    }
}

pub(crate) fn standardize_backward<T: Scalar>(s: &StandardizeSpec<T>, g: &[T], buf: &mut [T]) {
    let groups = s.inv_std.len();
    let mut sum_g = vec![T::zero(); groups];
    let mut sum_gy = vec![T::zero(); groups];
    for_each_group(s.axis, s.dims, g, |grp, i| {
        sum_g[grp] += g[i];
        sum_gy[grp] += g[i] * s.xhat[i];
    });
    let count = T::from_usize(g.len() / groups.max(1)).unwrap();
    for_each_group(s.axis, s.dims, g, |grp, i| {
        buf[i] += s.inv_std[grp] / count * (count * g[i] - sum_g[grp] - s.xhat[i] * sum_gy[grp]);
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_axis_rows_have_zero_mean_unit_variance() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..12).map(|i| ((i * i) % 7) as f64 * 1.3 - 2.0).collect();
        let x = tape.constant(Tensor::new(&[3, 4], data).unwrap());
        let (y, m) = tape.standardize(x, NormAxis::Last, 0.0).unwrap();
        assert_eq!(m.mean.len(), 3);
        for row in tape.value(y).data().chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn channel_axis_pools_over_batch() {
        let mut tape = Tape::<f64>::new();
        // Channel 0 holds {1,2,5,6}, channel 1 holds {3,4,7,8}.
        let x = tape.constant(Tensor::new(&[2, 2, 2], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap());
        let (_, m) = tape.standardize(x, NormAxis::Channel, 0.0).unwrap();
        assert_eq!(m.mean, vec![3.5, 5.5]);
        assert_eq!(m.count, 4);
        assert!((m.var[0] - 4.25).abs() < 1e-12);
    }
}
