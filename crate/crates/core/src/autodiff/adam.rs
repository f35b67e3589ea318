use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected update. `grads[i]` belongs to tensor `i` of the store.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("adam", format!("{} gradients for {} tensors", grads.len(), params.len())));
        }
        for (i, (t, g)) in params.tensors().iter().zip(grads).enumerate() {
            if t.len() != g.len() || self.m[i].len() != g.len() {
                return Err(Error::shape("adam", format!("tensor {i}: {} values vs {} gradients", t.len(), g.len())));
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in t.values.iter_mut().enumerate() {
                let gj = grads[i][j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn scalar_store(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("x", Tensor::scalar(x)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar_store(1.5);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.step(&mut p, &[vec![0.0]], 0.1).unwrap();
        assert_eq!(p.tensors()[0].values, vec![1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_store(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.step(&mut p, &[vec![-3.0]], 0.01).unwrap();
        assert!((p.tensors()[0].values[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn two_step_trace() {
        // g1 = 2, g2 = -1, lr = 0.1
        // m1 = 0.2, v1 = 0.004 -> mhat 2, vhat 4 -> step 0.1 * 2 / (2 + 1e-8)
        // m2 = 0.18 - 0.1 = 0.08, v2 = 0.003996 + 0.001 = 0.004996
        // mhat = 0.08 / 0.19, vhat = 0.004996 / (1 - 0.999^2)
        let mut p = scalar_store(1.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.step(&mut p, &[vec![2.0]], 0.1).unwrap();
        let x1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p.tensors()[0].values[0] - x1).abs() < 1e-15);
        s.step(&mut p, &[vec![-1.0]], 0.1).unwrap();
        let mhat = 0.08 / (1.0 - 0.81);
        let vhat = 0.004996 / (1.0 - 0.998001);
        let x2 = x1 - 0.1 * mhat / (f64::sqrt(vhat) + 1e-8);
        assert!((p.tensors()[0].values[0] - x2).abs() < 1e-12);
    }

    #[test]
    fn misaligned_gradients_error() {
        let mut p = scalar_store(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(s.step(&mut p, &[vec![1.0, 2.0]], 0.1).is_err());
        assert!(s.step(&mut p, &[], 0.1).is_err());
    }
}
