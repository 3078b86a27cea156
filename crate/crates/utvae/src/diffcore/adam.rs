//! Bias-corrected Adam over a [`ParamStore`].

use super::params::{GradientMap, ParamStore};
use super::tensor::Tensor;
use super::DiffError;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Optimizer state: first and second moment estimates per parameter.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| {
                let (r, c) = store.value(id).shape();
                Tensor::zeros(r, c)
            })
            .collect();
        Adam { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One update over every parameter in the store. Parameters without a
    /// gradient entry see zero (their moments still decay). A non-finite
    /// gradient aborts before anything is touched and names the parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradientMap) -> Result<(), DiffError> {
        for id in store.ids() {
            if let Some(g) = grads.get(id) {
                assert_eq!(
                    g.shape(),
                    store.value(id).shape(),
                    "gradient shape mismatch for parameter `{}`",
                    store.param(id).name()
                );
                if !g.all_finite() {
                    return Err(DiffError::NonFiniteGradient { name: store.param(id).name().to_string() });
                }
            }
        }

        self.step += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for id in store.ids() {
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.value_mut(id).data_mut();
            match grads.get(id) {
                Some(g) => {
                    for (((mk, vk), pk), &gk) in m.iter_mut().zip(v.iter_mut()).zip(p.iter_mut()).zip(g.data()) {
                        *mk = b1 * *mk + (1.0 - b1) * gk;
                        *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                        let m_hat = *mk / bc1;
                        let v_hat = *vk / bc2;
                        *pk -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                    }
                }
                None => {
                    for ((mk, vk), pk) in m.iter_mut().zip(v.iter_mut()).zip(p.iter_mut()) {
                        *mk *= b1;
                        *vk *= b2;
                        let m_hat = *mk / bc1;
                        let v_hat = *vk / bc2;
                        *pk -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
