use super::params::{ParamSelector, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Tensor,
    v: Tensor,
    updates: u64,
}

/// Adam with bias correction.
///
/// Moment buffers are created the first time a parameter is updated and the
/// bias correction uses that parameter's own update count, so a parameter that
/// sat frozen for the first N steps starts from a fresh, correctly
/// bias-corrected state.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    state: Vec<Option<Moments>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: Vec::new(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of completed `step` calls.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates the parameters in `active` from their stored gradients.
    /// Parameters outside `active` are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, active: &ParamSelector) -> Result<()> {
        for id in active.iter() {
            let p = store.get(id);
            if p.trainable() && p.grad().is_none() {
                return Err(Error::contract(format!(
                    "active parameter {} has no gradient",
                    p.name()
                )));
            }
        }
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for id in active.iter() {
            let p = store.get_mut(id);
            if !p.trainable() {
                continue;
            }
            let grad = p.grad().expect("checked above").clone();
            let st = self.state[id.index()].get_or_insert_with(|| Moments {
                m: Tensor::zeros(grad.shape()),
                v: Tensor::zeros(grad.shape()),
                updates: 0,
            });
            st.updates += 1;
            let bc1 = 1.0 - beta1.powi(st.updates as i32);
            let bc2 = 1.0 - beta2.powi(st.updates as i32);
            let values = p.value_mut().data_mut();
            for (((w, &g), m), v) in values
                .iter_mut()
                .zip(grad.data())
                .zip(st.m.data_mut())
                .zip(st.v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}
