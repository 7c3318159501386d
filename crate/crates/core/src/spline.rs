//! Uniform B-spline grids and batched Cox–de Boor basis evaluation.
//!
//! A grid with `G` intervals on `[x_min, x_max]` and degree `k` uses the
//! extended knot vector `t_j = x_min + (j - k) h` for `j = 0..=G + 2k`, with
//! `h = (x_max - x_min) / G`. That gives `G + k` basis functions; basis `j`
//! is supported on `[t_j, t_{j+k+1})`. Inputs outside `[t_0, t_{G+2k})`
//! evaluate to all zeros.
//!
//! Evaluation runs the triangular Cox–de Boor scheme over the `k + 1`
//! non-zero functions of the knot span containing `x`. Because the knots are
//! uniform, the recursion works in knot units and `h` only appears in the
//! derivative.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Highest supported spline degree.
pub const MAX_ORDER: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub grid_size: usize,
    pub order: usize,
}

impl Default for SplineGrid {
    fn default() -> Self {
        SplineGrid { x_min: -1.0, x_max: 1.0, grid_size: 5, order: 3 }
    }
}

/// Non-zero basis values at one point.
///
/// `values[r]` belongs to basis index `first + r`; indices outside
/// `0..num_basis` are virtual functions of the extended grid and are skipped
/// by callers.
#[derive(Clone, Copy, Debug)]
pub struct LocalBasis<S> {
    pub first: isize,
    pub values: [S; MAX_ORDER + 1],
    /// Derivatives with respect to `x`, same indexing as `values`.
    pub derivs: [S; MAX_ORDER + 1],
}

impl SplineGrid {
    pub fn new(x_min: f64, x_max: f64, grid_size: usize, order: usize) -> Result<Self> {
        let grid = SplineGrid { x_min, x_max, grid_size, order };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 1 {
            return Err(Error::invalid("spline grid", "grid size must be at least 1"));
        }
        if self.order < 1 || self.order > MAX_ORDER {
            return Err(Error::invalid("spline grid", "order must be in 1..=15"));
        }
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max) {
            return Err(Error::invalid("spline grid", "range must be finite with x_min < x_max"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / self.grid_size as f64
    }

    /// Basis functions per scalar input, `G + k`.
    pub fn num_basis(&self) -> usize {
        self.grid_size + self.order
    }

    /// Number of knot intervals of the extended vector, `G + 2k`.
    fn num_intervals(&self) -> usize {
        self.grid_size + 2 * self.order
    }

    pub fn knot(&self, j: isize) -> f64 {
        self.x_min + (j - self.order as isize) as f64 * self.spacing()
    }

    /// The extended knot vector, `G + 2k + 1` entries.
    pub fn knots(&self) -> Vec<f64> {
        (0..=self.num_intervals() as isize).map(|j| self.knot(j)).collect()
    }

    /// Evaluates the `k + 1` basis functions that can be non-zero at `x`,
    /// together with their derivatives. `None` outside the extended knot range.
    pub fn local<S: Scalar>(&self, x: S) -> Option<LocalBasis<S>> {
        let k = self.order;
        let h = S::of(self.spacing());
        // position in knot units, t_j sits at u = j
        let u = (x - S::of(self.x_min)) / h + S::of(k as f64);
        if !(u >= S::zero()) || u >= S::of(self.num_intervals() as f64) {
            return None;
        }
        let span = u.floor().as_f64() as isize;
        let span_s = S::of(span as f64);

        let mut n = [S::zero(); MAX_ORDER + 1];
        let mut left = [S::zero(); MAX_ORDER + 1];
        let mut right = [S::zero(); MAX_ORDER + 1];
        let mut lower = [S::zero(); MAX_ORDER + 1];
        n[0] = S::one();
        for j in 1..=k {
            // distances to t_{span+1-j} and t_{span+j}
            left[j] = u - span_s - S::of(1.0 - j as f64);
            right[j] = span_s + S::of(j as f64) - u;
            if j == k {
                lower = n;
            }
            let mut saved = S::zero();
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }

        // B'_{j,k} = (B_{j,k-1} - B_{j+1,k-1}) / h on a uniform grid; at this span the
        // degree k-1 functions are j = span-k+1 ..= span, i.e. lower[r-1] for slot r.
        let mut derivs = [S::zero(); MAX_ORDER + 1];
        for r in 0..=k {
            let a = if r >= 1 { lower[r - 1] } else { S::zero() };
            let b = if r < k { lower[r] } else { S::zero() };
            derivs[r] = (a - b) / h;
        }
        Some(LocalBasis { first: span - k as isize, values: n, derivs })
    }

    /// Dense basis row of length `G + k` for a single input.
    pub fn basis_into<S: Scalar>(&self, x: S, out: &mut [S]) {
        assert_eq!(out.len(), self.num_basis());
        out.iter_mut().for_each(|v| *v = S::zero());
        if let Some(local) = self.local(x) {
            for r in 0..=self.order {
                let j = local.first + r as isize;
                if j >= 0 && (j as usize) < out.len() {
                    out[j as usize] = local.values[r];
                }
            }
        }
    }

    pub fn basis<S: Scalar>(&self, x: S) -> Vec<S> {
        let mut out = vec![S::zero(); self.num_basis()];
        self.basis_into(x, &mut out);
        out
    }

    /// Batched basis: every element of `xs` expands to a dense row of `G + k`
    /// values, so `out.len() == xs.len() * (G + k)`.
    pub fn basis_batch<S: Scalar>(&self, xs: &[S], out: &mut [S]) {
        let nb = self.num_basis();
        assert_eq!(out.len(), xs.len() * nb);
        for (x, row) in xs.iter().zip(out.chunks_exact_mut(nb)) {
            self.basis_into(*x, row);
        }
    }

    /// Minimum-norm coefficient map for fitting values at the `G + 1` grid
    /// points `x_min + g h`: returns a `(G + k) x (G + 1)` row-major matrix
    /// `M` with `coeffs = M y` and `basis(x_g) . coeffs = y_g`.
    pub fn interpolation_map(&self) -> Vec<f64> {
        let rows = self.grid_size + 1;
        let nb = self.num_basis();
        let h = self.spacing();
        let mut a = vec![0.0; rows * nb];
        for g in 0..rows {
            self.basis_into(self.x_min + g as f64 * h, &mut a[g * nb..(g + 1) * nb]);
        }
        // A A^T is symmetric positive definite (B-spline collocation has full row rank)
        let mut gram = vec![0.0; rows * rows];
        for i in 0..rows {
            for j in 0..rows {
                gram[i * rows + j] = (0..nb).map(|c| a[i * nb + c] * a[j * nb + c]).sum();
            }
        }
        let inv = invert(&gram, rows);
        // M = A^T (A A^T)^-1
        let mut map = vec![0.0; nb * rows];
        for c in 0..nb {
            for g in 0..rows {
                map[c * rows + g] = (0..rows).map(|i| a[i * nb + c] * inv[i * rows + g]).sum();
            }
        }
        map
    }
}

/// Gauss-Jordan inverse with partial pivoting of a small dense matrix.
fn invert(m: &[f64], n: usize) -> Vec<f64> {
    let w = 2 * n;
    let mut aug = vec![0.0; n * w];
    for i in 0..n {
        aug[i * w..i * w + n].copy_from_slice(&m[i * n..(i + 1) * n]);
        aug[i * w + n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| aug[a * w + col].abs().total_cmp(&aug[b * w + col].abs()))
            .unwrap_or(col);
        if pivot != col {
            for c in 0..w {
                aug.swap(col * w + c, pivot * w + c);
            }
        }
        let p = aug[col * w + col];
        for c in 0..w {
            aug[col * w + c] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r * w + col];
                if f != 0.0 {
                    for c in 0..w {
                        aug[r * w + c] -= f * aug[col * w + c];
                    }
                }
            }
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n..(i + 1) * n].copy_from_slice(&aug[i * w + n..(i + 1) * w]);
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook recursive definition over the explicit knot vector.
    fn cox_de_boor(t: &[f64], j: usize, k: usize, x: f64) -> f64 {
        if k == 0 {
            return if t[j] <= x && x < t[j + 1] { 1.0 } else { 0.0 };
        }
        let a = (x - t[j]) / (t[j + k] - t[j]) * cox_de_boor(t, j, k - 1, x);
        let b = (t[j + k + 1] - x) / (t[j + k + 1] - t[j + 1]) * cox_de_boor(t, j + 1, k - 1, x);
        a + b
    }

    #[test]
    fn knot_vector_layout() {
        let g = SplineGrid::default();
        let t = g.knots();
        assert_eq!(t.len(), 5 + 2 * 3 + 1);
        assert_eq!(g.num_basis(), 8);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!((t[3] + 1.0).abs() < 1e-15 && (t[8] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(SplineGrid::new(-1.0, 1.0, 0, 3).is_err());
        assert!(SplineGrid::new(-1.0, 1.0, 5, 0).is_err());
        assert!(SplineGrid::new(1.0, 1.0, 5, 3).is_err());
    }

    #[test]
    fn matches_recursive_definition() {
        for &(gs, k) in &[(5usize, 3usize), (4, 1), (7, 2), (3, 5)] {
            let g = SplineGrid::new(-1.0, 1.0, gs, k).unwrap();
            let t = g.knots();
            for i in 0..400 {
                let x = -2.2 + 4.4 * i as f64 / 399.0;
                let fast = g.basis(x);
                for (j, v) in fast.iter().enumerate() {
                    let slow = cox_de_boor(&t, j, k, x);
                    assert!((v - slow).abs() < 1e-12, "G={gs} k={k} x={x} j={j}: {v} vs {slow}");
                }
            }
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let g = SplineGrid::default();
        let h = 1e-6;
        for i in 0..97 {
            let x = -1.7 + 3.4 * i as f64 / 96.0 + 1e-3;
            let local = g.local(x).unwrap();
            let up = g.basis(x + h);
            let dn = g.basis(x - h);
            for r in 0..=g.order {
                let j = local.first + r as isize;
                if j < 0 || j as usize >= g.num_basis() {
                    continue;
                }
                let fd = (up[j as usize] - dn[j as usize]) / (2.0 * h);
                assert!((local.derivs[r] - fd).abs() < 1e-6, "x={x} j={j}");
            }
        }
    }

    #[test]
    fn outside_extended_range_is_zero() {
        let g = SplineGrid::default();
        assert!(g.basis(-2.21f64).iter().all(|&v| v == 0.0));
        assert!(g.basis(2.2f64).iter().all(|&v| v == 0.0));
        assert!(g.basis(f64::NAN).iter().all(|&v| v == 0.0));
        // inside the extension the basis is partial but non-zero
        let s: f64 = g.basis(1.5f64).iter().sum();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn interpolation_map_reproduces_targets() {
        let g = SplineGrid::default();
        let map = g.interpolation_map();
        let rows = g.grid_size + 1;
        let y: Vec<f64> = (0..rows).map(|i| (i as f64 * 0.37).sin() * 0.05).collect();
        let coeffs: Vec<f64> = (0..g.num_basis())
            .map(|c| (0..rows).map(|r| map[c * rows + r] * y[r]).sum())
            .collect();
        for (gi, target) in y.iter().enumerate() {
            let x = g.x_min + gi as f64 * g.spacing();
            let v: f64 = g.basis(x).iter().zip(&coeffs).map(|(b, c)| b * c).sum();
            assert!((v - target).abs() < 1e-12);
        }
    }
}
