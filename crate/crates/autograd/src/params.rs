//! Named parameter registry shared by every model.

use std::collections::HashSet;
use std::ops::Index;

use rand::Rng;

use crate::error::{shape_err, AutogradError, Result};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// A named trainable tensor, e.g. `ae.enc1.kernel`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Non-trainable state such as batch-norm running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferId(usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    buffers: Vec<Parameter>,
    names: HashSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if !self.names.insert(name.to_string()) {
            return Err(AutogradError::DuplicateName(name.to_string()));
        }
        Ok(())
    }

    pub fn register(&mut self, name: &str, tensor: Tensor<f32>) -> Result<ParamId> {
        self.claim(name)?;
        self.params.push(Parameter {
            name: name.to_string(),
            tensor,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn register_buffer(&mut self, name: &str, tensor: Tensor<f32>) -> Result<BufferId> {
        self.claim(name)?;
        self.buffers.push(Parameter {
            name: name.to_string(),
            tensor,
        });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Tensor<f32> {
        &self.params[id.0].tensor
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<f32> {
        &self.buffers[id.0].tensor
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<f32> {
        &mut self.buffers[id.0].tensor
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn buffers(&self) -> &[Parameter] {
        &self.buffers
    }

    pub fn param_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    /// Total trainable scalar count.
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Records every parameter on `tape`, as gradient leaves when `trainable`.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.tensor.cast(), trainable))
            .collect();
        Bound { vars }
    }

    /// Per-parameter gradients in registration order; unused parameters get zeros.
    pub fn collect_grads<T: Scalar>(&self, bound: &Bound, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))
            })
            .collect()
    }

    /// All parameters then all buffers, in registration order.
    pub fn entries(&self) -> Vec<(String, Tensor<f32>)> {
        self.params
            .iter()
            .chain(&self.buffers)
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .collect()
    }

    /// Overwrites every registered tensor from `entries`, which must cover all names with matching shapes.
    pub fn load_entries<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<()> {
        let lookup: std::collections::HashMap<&str, &Tensor<f32>> = entries.into_iter().collect();
        for p in self.params.iter_mut().chain(self.buffers.iter_mut()) {
            let Some(t) = lookup.get(p.name.as_str()) else {
                return Err(AutogradError::Format(format!("missing tensor `{}`", p.name)));
            };
            if t.shape() != p.tensor.shape() {
                return shape_err(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.tensor.shape()
                ));
            }
            p.tensor = (*t).clone();
        }
        Ok(())
    }
}

/// Tape handles for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles given in parameter registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Centered uniform samples in `[-limit, limit)`.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * limit) as f32)
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Uniform fan-in scaling with unit-variance preserving limit `sqrt(3 / fan_in)`.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<f32> {
    uniform(shape, (3.0 / fan_in.max(1) as f64).sqrt(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::new();
        s.register("a.w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            s.register_buffer("a.w", Tensor::zeros(&[2])),
            Err(AutogradError::DuplicateName(_))
        ));
    }

    #[test]
    fn count_sums_registered_parameters() {
        let mut s = ParamStore::new();
        assert_eq!(s.num_parameters(), 0);
        s.register("d.w", Tensor::zeros(&[16, 1])).unwrap();
        s.register("d.b", Tensor::zeros(&[1])).unwrap();
        s.register_buffer("bn.mean", Tensor::zeros(&[4])).unwrap();
        assert_eq!(s.num_parameters(), 17);
    }

    #[test]
    fn load_entries_requires_every_name() {
        let mut s = ParamStore::new();
        s.register("x", Tensor::zeros(&[2])).unwrap();
        let other = Tensor::from_vec(vec![1.0f32, 2.0]);
        assert!(s.load_entries([("y", &other)]).is_err());
        s.load_entries([("x", &other)]).unwrap();
        assert_eq!(s.params()[0].tensor.data(), &[1.0, 2.0]);
    }
}
