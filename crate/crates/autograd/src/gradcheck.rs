//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Relative errors below this magnitude floor are measured against the floor.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares gradients of `sum(f(inputs) * R)` for a fixed random `R` against
/// central differences with step `h`, over every element of every input.
pub fn grad_check<F>(inputs: &[Tensor<f64>], h: f64, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection: Vec<f64> = (0..tape.value(out).numel())
        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
        .collect();
    let objective = |xs: &[Tensor<f64>]| -> Result<f64> {
        let (tape, _, out) = eval(xs)?;
        Ok(tape
            .value(out)
            .data()
            .iter()
            .zip(&projection)
            .map(|(a, b)| a * b)
            .sum())
    };
    let grads = tape.backward_with(out, projection.clone())?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut point = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = point[i].data()[j];
            point[i].data_mut()[j] = orig + h;
            let up = objective(&point)?;
            point[i].data_mut()[j] = orig - h;
            let down = objective(&point)?;
            point[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx of sum(x * x) via mul is correct; scaling the output by a
        // detached copy of x makes the analytic gradient drop a term.
        let x = Tensor::from_vec(vec![0.7, -1.3, 2.0]);
        let ok = grad_check(&[x.clone()], DEFAULT_STEP, 1, |t, v| t.mul(v[0], v[0])).unwrap();
        assert!(ok.passes(1e-6), "{ok:?}");
        let bad = grad_check(&[x], DEFAULT_STEP, 1, |t, v| {
            let d = t.detach(v[0]);
            t.mul(v[0], d)
        })
        .unwrap();
        assert!(!bad.passes(1e-3));
    }
}
