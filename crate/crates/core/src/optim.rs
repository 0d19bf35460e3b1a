//! Adam over one or more parameter stores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Moment buffers are laid out per store and per parameter, in the order the
/// stores are passed to [`Adam::step`]; callers must pass the same stores in
/// the same order every step.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    state: Vec<Vec<Option<Moments>>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if config.lr.is_nan()
            || config.lr <= 0.0
            || !(0.0..1.0).contains(&config.beta1)
            || !(0.0..1.0).contains(&config.beta2)
        {
            return Err(Error::Config(format!("invalid Adam settings {config:?}")));
        }
        Ok(Adam {
            config,
            t: 0,
            state: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every trainable tensor that holds a gradient. Returns the
    /// number of scalar weights touched.
    pub fn step(&mut self, stores: &mut [&mut ParamStore]) -> usize {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        if self.state.len() < stores.len() {
            self.state.resize(stores.len(), Vec::new());
        }
        let mut touched = 0;
        for (store, state) in stores.iter_mut().zip(&mut self.state) {
            if state.len() < store.len() {
                state.resize(store.len(), None);
            }
            for (p, slot) in store.iter_mut().zip(state.iter_mut()) {
                if !p.tensor.requires_grad() {
                    continue;
                }
                let Some(grad) = p.tensor.grad().map(<[f64]>::to_vec) else {
                    continue;
                };
                let mom = slot.get_or_insert_with(|| Moments {
                    m: vec![0.0; grad.len()],
                    v: vec![0.0; grad.len()],
                });
                let data = p.tensor.data_mut();
                for i in 0..grad.len() {
                    let g = grad[i];
                    mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
                    mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = mom.m[i] / bc1;
                    let v_hat = mom.v[i] / bc2;
                    data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
                touched += grad.len();
            }
        }
        touched
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0, -2.0, 0.5]).with_requires_grad(true));
        store.add("frozen", Tensor::vector(vec![3.0]));
        store.get_mut(id).accumulate_grad(&[4.0, -0.1, 0.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.1)).unwrap();
        let touched = adam.step(&mut [&mut store]);
        assert_eq!(touched, 3);
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
        assert_eq!(store.get(store.find("frozen").unwrap()).data(), &[3.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![5.0, -3.0]).with_requires_grad(true));
        let mut adam = Adam::new(AdamConfig::with_lr(0.05)).unwrap();
        for _ in 0..2000 {
            store.zero_grad();
            let g: Vec<f64> = store.get(id).data().iter().map(|x| 2.0 * (x - 1.0)).collect();
            store.get_mut(id).accumulate_grad(&g).unwrap();
            adam.step(&mut [&mut store]);
        }
        for &x in store.get(id).data() {
            assert!((x - 1.0).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn rejects_nonpositive_lr() {
        assert!(Adam::new(AdamConfig::with_lr(0.0)).is_err());
        assert!(Adam::new(AdamConfig::with_lr(f64::NAN)).is_err());
    }
}
