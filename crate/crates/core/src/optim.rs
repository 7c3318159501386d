//! Adam with bias correction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::Gradients;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers aligned with the enumeration order of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub config: AdamConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &ParamStore<S>) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| vec![S::zero(); p.len()]).collect();
        Adam { config, m: zeros(), v: zeros(), t: 0 }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn second_moments(&self) -> &[Vec<S>] {
        &self.v
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient. Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::invalid("adam", "parameter count changed since construction"));
        }
        for (id, g) in grads.params().iter().enumerate() {
            if let Some(g) = g {
                if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                    let name = params.name(crate::params::ParamId(id));
                    return Err(Error::NonFinite { what: "gradient", at: format!("{name}[{pos}] at step {}", self.t + 1) });
                }
            }
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let (one_b1, one_b2) = (S::of(1.0 - c.beta1), S::of(1.0 - c.beta2));
        let (inv_bc1, inv_bc2) = (S::of(1.0 / bc1), S::of(1.0 / bc2));
        let (lr, eps) = (S::of(c.lr), S::of(c.eps));

        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads.params().get(i).and_then(Option::as_ref);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let theta = params.get_mut(id).data_mut();
            for j in 0..theta.len() {
                let gj = g.map_or(S::zero(), |g| g.data()[j]);
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let m_hat = m[j] * inv_bc1;
                let v_hat = v[j] * inv_bc2;
                theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
