//! Plain layers used by the MLP baselines and by the mixer skeleton.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kan::KanLinear;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::spline::SplineGrid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine layer `y = x W^T + b`, weight `[n_out, n_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Weights and bias drawn from `U(-1/sqrt(n_in), 1/sqrt(n_in))`.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::invalid("linear", "extents must be positive"));
        }
        let bound = 1.0 / (n_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<S> { (0..n).map(|_| S::of((rng.random::<f64>() * 2.0 - 1.0) * bound)).collect() };
        let w = draw(n_out * n_in);
        let b = draw(n_out);
        let weight = store.add(format!("{name}.weight"), Tensor::new(&[n_out, n_in], w)?);
        let bias = store.add(format!("{name}.bias"), Tensor::new(&[n_out], b)?);
        Ok(Linear { n_in, n_out, weight, bias })
    }

    pub fn param_count(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    /// Maps `[..., n_in]` to `[..., n_out]`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.last() != Some(&self.n_in) {
            return Err(Error::Shape { op: "linear", lhs: shape, rhs: vec![self.n_in] });
        }
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul_t(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Learnable scale and shift for a layer norm over the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], S::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        LayerNorm { dim, gamma, beta, eps: LAYER_NORM_EPS }
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, self.eps)
    }
}

/// A learnable map between feature widths: either a KAN layer or an affine layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Dense {
    Kan(KanLinear),
    Linear(Linear),
}

impl Dense {
    pub fn kan<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        n_in: usize,
        n_out: usize,
        grid: SplineGrid,
        rng: &mut R,
    ) -> Result<Self> {
        KanLinear::new(store, name, n_in, n_out, grid, rng).map(Dense::Kan)
    }

    pub fn linear<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Linear::new(store, name, n_in, n_out, rng).map(Dense::Linear)
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        match self {
            Dense::Kan(l) => l.forward(tape, x),
            Dense::Linear(l) => l.forward(tape, x),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Dense::Kan(l) => l.param_count(),
            Dense::Linear(l) => l.param_count(),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        match self {
            Dense::Kan(l) => [l.base_weight, l.spline_weight],
            Dense::Linear(l) => [l.weight, l.bias],
        }
    }

    /// Sets every parameter of the layer to zero.
    pub fn zero<S: Scalar>(&self, store: &mut ParamStore<S>) {
        for id in self.param_ids() {
            store.get_mut(id).data_mut().fill(S::zero());
        }
    }
}
