use crate::error::{shape_err, AutogradError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && in_unit(self.beta1) && in_unit(self.beta2) && self.eps > 0.0) {
            return Err(AutogradError::InvalidArgument(format!("invalid Adam config {self:?}")));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
    ) -> Result<()> {
        let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
        if params.len() != grads.len() {
            return shape_err(format!("{} parameters but {} gradients", params.len(), grads.len()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return shape_err("optimizer bound to a different parameter set");
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first[i].len() != p.numel() {
                return shape_err(format!(
                    "parameter {i}: shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                ));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let step = self.step as i32;
        let corr1 = T::one() - b1.powi(step);
        let corr2 = T::one() - b2.powi(step);
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / corr1;
                let vhat = *vi / corr2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::<f64>::from_vec(vec![1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        adam.step([&mut p], &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::<f64>::from_vec(vec![0.0, 0.0, 0.0]);
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg).unwrap();
        adam.step([&mut p], &[Tensor::from_vec(vec![3.0, -0.5, 1e-2])]).unwrap();
        for (w, s) in p.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((w - s * cfg.lr).abs() < cfg.lr * 1e-4, "{w}");
        }
    }

    #[test]
    fn two_steps_match_hand_iteration() {
        let cfg = AdamConfig::with_lr(0.01);
        let grad = [0.4f64, -1.5];
        let mut p = Tensor::<f64>::from_vec(vec![0.2, 0.3]);
        let mut adam = Adam::new(cfg).unwrap();
        for _ in 0..2 {
            adam.step([&mut p], &[Tensor::from_vec(grad.to_vec())]).unwrap();
        }
        for (i, &g) in grad.iter().enumerate() {
            let mut w = [0.2, 0.3][i];
            let (mut m, mut v) = (0.0, 0.0);
            for t in 1..=2 {
                m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
                v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
                let mh = m / (1.0 - cfg.beta1.powi(t));
                let vh = v / (1.0 - cfg.beta2.powi(t));
                w -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
            assert!((p.data()[i] - w).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = Tensor::<f64>::from_vec(vec![0.0, 0.0]);
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        assert!(adam.step([&mut p], &[Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(Adam::<f32>::new(cfg).is_err());
    }
}
