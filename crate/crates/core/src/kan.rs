//! KAN linear layer in the batched ("efficient") formulation.
//!
//! Every connection `i -> o` carries the learnable function
//! `phi(x) = w_base[o, i] * silu(x) + sum_j c[o, i, j] * B_j(x)`, and output
//! `o` sums `phi` over its inputs. Batched, that is two matrix products:
//!
//! ```text
//! y = silu(x) @ base_weight^T + basis(x).reshape(b, n_in * (G + k)) @ spline_weight.reshape(n_out, n_in * (G + k))^T
//! ```
//!
//! The grid is static and shared by all inputs of a layer.

use alloc::format;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::spline::SplineGrid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Amplitude of the initial spline noise: targets are drawn from `U(-eps/2, eps/2)`.
pub const SPLINE_INIT_NOISE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct KanLinear {
    pub n_in: usize,
    pub n_out: usize,
    pub grid: SplineGrid,
    pub base_weight: ParamId,
    pub spline_weight: ParamId,
}

impl KanLinear {
    /// Registers `{name}.base_weight` `[n_out, n_in]` and
    /// `{name}.spline_weight` `[n_out, n_in, G + k]` in `store`.
    ///
    /// Base weights are `U(-sqrt(6 / n_in), sqrt(6 / n_in))`. Each connection's
    /// spline starts as the minimum-norm interpolant of small uniform noise at
    /// the `G + 1` grid points.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        n_in: usize,
        n_out: usize,
        grid: SplineGrid,
        rng: &mut R,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::invalid("kan_linear", "extents must be positive"));
        }
        grid.validate()?;
        let bound = (6.0 / n_in as f64).sqrt();
        let base: Vec<S> = (0..n_out * n_in).map(|_| S::of((rng.random::<f64>() * 2.0 - 1.0) * bound)).collect();

        let nb = grid.num_basis();
        let points = grid.grid_size + 1;
        let map = grid.interpolation_map();
        let mut spline = Vec::with_capacity(n_out * n_in * nb);
        let mut targets = alloc::vec![0.0; points];
        for _ in 0..n_out * n_in {
            for t in targets.iter_mut() {
                *t = (rng.random::<f64>() - 0.5) * SPLINE_INIT_NOISE;
            }
            for c in 0..nb {
                let v: f64 = map[c * points..(c + 1) * points].iter().zip(&targets).map(|(m, y)| m * y).sum();
                spline.push(S::of(v));
            }
        }
        let base_weight = store.add(format!("{name}.base_weight"), Tensor::new(&[n_out, n_in], base)?);
        let spline_weight = store.add(format!("{name}.spline_weight"), Tensor::new(&[n_out, n_in, nb], spline)?);
        Ok(KanLinear { n_in, n_out, grid, base_weight, spline_weight })
    }

    /// `n_out * n_in * (G + k + 1)`.
    pub fn param_count(&self) -> usize {
        self.n_out * self.n_in * (self.grid.num_basis() + 1)
    }

    /// Maps `[..., n_in]` to `[..., n_out]`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.last() != Some(&self.n_in) {
            return Err(Error::Shape { op: "kan_linear", lhs: shape, rhs: alloc::vec![self.n_in] });
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let nb = self.grid.num_basis();
        let x2 = if shape.len() == 2 { x } else { tape.reshape(x, &[rows, self.n_in])? };

        let act = tape.silu(x2);
        let base = tape.param(self.base_weight);
        let base_out = tape.matmul_t(act, base)?;

        let basis = tape.bspline_basis(x2, self.grid)?;
        let basis = tape.reshape(basis, &[rows, self.n_in * nb])?;
        let coeffs = tape.param(self.spline_weight);
        let coeffs = tape.reshape(coeffs, &[self.n_out, self.n_in * nb])?;
        let spline_out = tape.matmul_t(basis, coeffs)?;

        let y = tape.add(base_out, spline_out)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = self.n_out;
        tape.reshape(y, &out_shape)
    }

    /// Scalar evaluation of one connection's learned function.
    pub fn edge<S: Scalar>(&self, store: &ParamStore<S>, out: usize, input: usize, x: S) -> S {
        let nb = self.grid.num_basis();
        let wb = store.get(self.base_weight).data()[out * self.n_in + input];
        let coeffs = &store.get(self.spline_weight).data()[(out * self.n_in + input) * nb..][..nb];
        let basis = self.grid.basis(x);
        let sig = S::one() / (S::one() + (-x).exp());
        wb * x * sig + basis.iter().zip(coeffs).map(|(&b, &c)| b * c).sum::<S>()
    }
}
