use crate::error::{shape_err, AutogradError, Result};
use crate::ops::elementwise::softmax_in_place;
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Probabilities are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

pub(crate) struct BceSpec<T> {
    pub(crate) pred: Var,
    target: Vec<T>,
}

pub(crate) struct CcSpec<T> {
    pub(crate) pred: Var,
    row_len: usize,
    pred_c: Vec<T>,
    target_c: Vec<T>,
    pred_norm: Vec<T>,
    target_norm: Vec<T>,
    r: Vec<T>,
}

pub(crate) struct CrossEntropySpec<T> {
    pub(crate) logits: Var,
    probs: Vec<T>,
    labels: Vec<usize>,
}

fn centered<T: Scalar>(row: &[T]) -> (Vec<T>, T) {
    let n = T::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<T>() / n;
    let c: Vec<T> = row.iter().map(|&v| v - mean).collect();
    let norm = c.iter().map(|&v| v * v).sum::<T>().sqrt();
    (c, norm)
}

impl<T: Scalar> Tape<T> {
    /// Mean binary cross-entropy against a constant target.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if target.shape() != self.shape(pred) {
            return shape_err(format!("bce: pred {:?} target {:?}", self.shape(pred), target.shape()));
        }
        let lo = T::lit(BCE_CLAMP);
        let hi = T::one() - lo;
        let p = self.value(pred).data();
        let n = T::from_usize(p.len().max(1)).unwrap();
        let total: T = p
            .iter()
            .zip(target.data())
            .map(|(&pi, &ti)| {
                let pc = pi.max(lo).min(hi);
                -(ti * pc.ln() + (T::one() - ti) * (T::one() - pc).ln())
            })
            .sum();
        let spec = BceSpec {
            pred,
            target: target.data().to_vec(),
        };
        Ok(self.push(Tensor::scalar(total / n), Op::Bce(spec)))
    }

    /// Mean over rows of `1 - pearson(pred_row, target_row)`; rows span the last axis.
    pub fn cc_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if target.shape() != self.shape(pred) {
            return shape_err(format!("cc_loss: pred {:?} target {:?}", self.shape(pred), target.shape()));
        }
        let row_len = *target.shape().last().unwrap_or(&0);
        if row_len < 2 {
            return shape_err("cc_loss needs rows of at least two samples");
        }
        let p = self.value(pred).data();
        let rows = p.len() / row_len;
        let mut spec = CcSpec {
            pred,
            row_len,
            pred_c: Vec::with_capacity(p.len()),
            target_c: Vec::with_capacity(p.len()),
            pred_norm: Vec::with_capacity(rows),
            target_norm: Vec::with_capacity(rows),
            r: Vec::with_capacity(rows),
        };
        for (pr, tr) in p.chunks(row_len).zip(target.data().chunks(row_len)) {
            let (pc, pn) = centered(pr);
            let (tc, tn) = centered(tr);
            if pn <= T::zero() || tn <= T::zero() {
                return Err(AutogradError::DegenerateSegment(
                    "constant row passed to cc_loss".into(),
                ));
            }
            let dot: T = pc.iter().zip(&tc).map(|(&a, &b)| a * b).sum();
            let r = (dot / (pn * tn)).max(-T::one()).min(T::one());
            spec.pred_c.extend(pc);
            spec.target_c.extend(tc);
            spec.pred_norm.push(pn);
            spec.target_norm.push(tn);
            spec.r.push(r);
        }
        let n = T::from_usize(rows).unwrap();
        let loss = spec.r.iter().map(|&r| T::one() - r).sum::<T>() / n;
        Ok(self.push(Tensor::scalar(loss), Op::CcLoss(spec)))
    }

    /// Mean softmax cross-entropy of `[N, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return shape_err(format!("cross_entropy: logits {shape:?} for {} labels", labels.len()));
        }
        let c = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(AutogradError::InvalidArgument(format!("label {bad} >= {c} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (row, &label) in probs.chunks_mut(c).zip(labels) {
            softmax_in_place(row);
            total -= row[label].max(T::min_positive_value()).ln();
        }
        let n = T::from_usize(labels.len().max(1)).unwrap();
        let spec = CrossEntropySpec {
            logits,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push(Tensor::scalar(total / n), Op::CrossEntropy(spec)))
    }
}

pub(crate) fn bce_backward<T: Scalar>(tape: &Tape<T>, s: &BceSpec<T>, g: T, buf: &mut [T]) {
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let p = tape.value(s.pred).data();
    let n = T::from_usize(p.len().max(1)).unwrap();
    for ((d, &pi), &ti) in buf.iter_mut().zip(p).zip(&s.target) {
        if pi < lo || pi > hi {
            continue;
        }
        *d += g * (-ti / pi + (T::one() - ti) / (T::one() - pi)) / n;
    }
}

pub(crate) fn cc_backward<T: Scalar>(s: &CcSpec<T>, g: T, buf: &mut [T]) {
    let rows = s.r.len();
    let n = T::from_usize(rows).unwrap();
    for row in 0..rows {
        let (pn, tn, r) = (s.pred_norm[row], s.target_norm[row], s.r[row]);
        let span = row * s.row_len..(row + 1) * s.row_len;
        for i in span {
            let dr = s.target_c[i] / (pn * tn) - r * s.pred_c[i] / (pn * pn);
            buf[i] -= g * dr / n;
        }
    }
}

pub(crate) fn cross_entropy_backward<T: Scalar>(s: &CrossEntropySpec<T>, g: T, buf: &mut [T]) {
    let c = s.probs.len() / s.labels.len().max(1);
    let n = T::from_usize(s.labels.len().max(1)).unwrap();
    for (row, (d, p)) in buf.chunks_mut(c).zip(s.probs.chunks(c)).enumerate() {
        for (j, (dj, &pj)) in d.iter_mut().zip(p).enumerate() {
            let y = if j == s.labels[row] { T::one() } else { T::zero() };
            *dj += g * (pj - y) / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_half_against_one_is_ln2() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_vec(vec![0.5]));
        let l = tape.bce(p, &Tensor::from_vec(vec![1.0])).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_clamps_extremes() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_vec(vec![0.0, 1.0]));
        let l = tape.bce(p, &Tensor::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(tape.value(l).data()[0].is_finite());
    }

    #[test]
    fn cc_loss_perfect_and_anti_correlation() {
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_vec(x.clone()));
        let same = tape.cc_loss(p, &Tensor::from_vec(x.clone())).unwrap();
        let anti = tape.cc_loss(p, &Tensor::from_vec(neg)).unwrap();
        assert!(tape.value(same).data()[0].abs() < 1e-12);
        assert!((tape.value(anti).data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cc_loss_rejects_constant_rows() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_vec(vec![1.0; 8]));
        let t = Tensor::from_vec((0..8).map(f64::from).collect());
        assert!(matches!(tape.cc_loss(p, &t), Err(AutogradError::DegenerateSegment(_))));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[2, 4]));
        let l = tape.cross_entropy(z, &[0, 3]).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
        assert!(tape.cross_entropy(z, &[0, 4]).is_err());
    }
}
