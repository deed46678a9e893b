//! Glue between the models and the autograd crate.

use std::path::Path;

use atat_autograd::{Adam, AutogradError, Checkpoint, ParamStore, Tensor, Var};

use crate::error::{CoreError, Result};

/// Stacks equal-length rows into a `[rows, len]` tensor.
pub(crate) fn batch_tensor<S: AsRef<[f64]>>(rows: &[S]) -> Result<Tensor<f32>> {
    let len = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
    let mut data = Vec::with_capacity(rows.len() * len);
    for r in rows {
        let r = r.as_ref();
        if r.len() != len {
            return Err(CoreError::Shape(format!("ragged batch: {} vs {len}", r.len())));
        }
        data.extend(r.iter().map(|&v| v as f32));
    }
    Ok(Tensor::new(&[rows.len(), len], data)?)
}

pub(crate) fn rows_of(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let len = *t.shape().last().unwrap_or(&1);
    t.data()
        .chunks(len.max(1))
        .map(|c| c.iter().map(|&v| v as f64).collect())
        .collect()
}

/// One optimiser step, refusing non-finite gradients.
pub(crate) fn adam_step(store: &mut ParamStore, adam: &mut Adam<f32>, grads: &[Tensor<f32>], what: &str) -> Result<()> {
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(CoreError::Divergence(format!("non-finite {what} gradient")));
    }
    adam.step(store.param_tensors_mut(), grads)?;
    Ok(())
}

pub(crate) fn finite_loss(value: f32, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value as f64)
    } else {
        Err(CoreError::Divergence(format!("{what} loss became {value}")))
    }
}

/// Correlation losses reject constant rows. Targets are normalised and never
/// constant, so a constant row means the model output collapsed.
pub(crate) fn collapse_is_divergence(loss: std::result::Result<Var, AutogradError>, what: &str) -> Result<Var> {
    loss.map_err(|e| match e {
        AutogradError::DegenerateSegment(m) => CoreError::Divergence(format!("{what} output collapsed: {m}")),
        e => e.into(),
    })
}

pub(crate) fn add_grads(acc: &mut Option<Vec<Tensor<f32>>>, grads: Vec<Tensor<f32>>, weight: f32) {
    match acc {
        None => {
            *acc = Some(
                grads
                    .into_iter()
                    .map(|mut g| {
                        g.data_mut().iter_mut().for_each(|v| *v *= weight);
                        g
                    })
                    .collect(),
            )
        }
        Some(a) => {
            for (a, g) in a.iter_mut().zip(grads) {
                for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x += weight * y;
                }
            }
        }
    }
}

pub(crate) fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn restore(store: &mut ParamStore, ckpt: &Checkpoint, path: &Path) -> Result<()> {
    store
        .load_entries(ckpt.iter())
        .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
}
