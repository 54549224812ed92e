use super::params::{Gradients, ParamStore};
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `param *= 1 - lr * weight_decay` before the Adam step.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    checked: bool,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
            checked: false,
        }
    }

    /// Reject non-finite gradients before touching any parameter.
    pub fn with_checks(mut self) -> Self {
        self.checked = true;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Config("gradient buffers do not match parameters".into()));
        }
        if self.checked {
            for id in params.ids() {
                if !grads.get(id).is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for {}",
                        params.name(id)
                    )));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = T::from_f64_lossy(c.lr);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let eps = T::from_f64_lossy(c.eps);
        let decay = T::from_f64_lossy(1.0 - c.lr * c.weight_decay);
        let corr1 = T::from_f64_lossy(1.0 - c.beta1.powi(t)).recip();
        let corr2 = T::from_f64_lossy(1.0 - c.beta2.powi(t)).recip();
        let one = T::one();

        for (id, (m, v)) in params.ids().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let g = grads.get(id).data();
            let p = params.get_mut(id).data_mut();
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Config("gradient shape does not match parameter".into()));
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] * corr1;
                let v_hat = v[i] * corr2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
