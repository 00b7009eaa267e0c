use crate::element::Element;
use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Result<Self> {
        if !(config.learning_rate >= 0.0) || !config.learning_rate.is_finite() {
            return Err(AutodiffError::InvalidArgument {
                op: "adam",
                msg: format!("learning rate {}", config.learning_rate),
            });
        }
        let zeros = || params.tensors().iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Ok(Self { config, first: zeros(), second: zeros(), step: 0 })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "adam",
                msg: format!("{} gradients for {} parameters", grads.len(), params.len()),
            });
        }
        for (p, g) in params.tensors().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(AutodiffError::Shape { op: "adam", lhs: p.shape(), rhs: g.shape() });
            }
        }
        self.step += 1;
        let c = self.config;
        let steps = i32::try_from(self.step).unwrap_or(i32::MAX);
        let correct1 = 1.0 - c.beta1.powi(steps);
        let correct2 = 1.0 - c.beta2.powi(steps);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one_b1 = T::from_f64_lossy(1.0 - c.beta1);
        let one_b2 = T::from_f64_lossy(1.0 - c.beta2);
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.eps);
        let inv1 = T::from_f64_lossy(1.0 / correct1);
        let inv2 = T::from_f64_lossy(1.0 / correct2);

        for (i, param) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, theta) in param.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let m_hat = m[j] * inv1;
                let v_hat = v[j] * inv2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
