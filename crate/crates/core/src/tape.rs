//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its output value and the data its backward rule needs, so
//! node inputs always precede the node itself. [`Tape::backward`] consumes the
//! tape and walks the nodes once in reverse, releasing each value as soon as
//! its rule has run.
//!
//! Parameters are not copied onto the tape: a [`Var`] may point straight into
//! the borrowed [`ParamStore`], and their gradients come back indexed by
//! [`ParamId`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::spline::SplineGrid;
use crate::tensor::{numel, rank3, transpose_into, Tensor};

/// Handle to a value recorded on a [`Tape`] or held in its parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(Slot);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Param(usize),
    Node(usize),
}

enum Op<S> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: S },
    Sum { x: Var },
    Reshape { x: Var },
    Transpose { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<S>, rstd: Vec<S> },
    Silu { x: Var },
    Gelu { x: Var },
    Relu { x: Var },
    Dropout { x: Var, mask: Vec<S> },
    MeanPool { x: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<S> },
    BSpline { x: Var, grid: SplineGrid },
}

struct Node<S> {
    value: Tensor<S>,
    requires_grad: bool,
    op: Op<S>,
}

pub struct Tape<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<S> {
    params: Vec<Option<Tensor<S>>>,
    leaves: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf created with `requires_grad = true`, or of a parameter.
    pub fn get(&self, var: Var) -> Option<&Tensor<S>> {
        match var.0 {
            Slot::Param(i) => self.params.get(i).and_then(Option::as_ref),
            Slot::Node(i) => self.leaves.get(i).and_then(Option::as_ref),
        }
    }

    /// Parameter gradients in store order; `None` for parameters the loss does not depend on.
    pub fn params(&self) -> &[Option<Tensor<S>>] {
        &self.params
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Tape { params, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&self, id: ParamId) -> Var {
        assert!(id.0 < self.params.len(), "parameter id out of range");
        Var(Slot::Param(id.0))
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        match var.0 {
            Slot::Param(i) => self.params.get(ParamId(i)),
            Slot::Node(i) => &self.nodes[i].value,
        }
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    fn requires_grad(&self, var: Var) -> bool {
        match var.0 {
            Slot::Param(_) => true,
            Slot::Node(i) => self.nodes[i].requires_grad,
        }
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(Slot::Node(self.nodes.len() - 1))
    }

    fn record(&mut self, value: Tensor<S>, inputs: &[Var], op: Op<S>) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.push(value, rg, op)
    }

    /// Batched `a @ b` over the last two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Batched `a @ b^T` where `b` is stored `[..., n, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let plan = MatMulPlan::new(self.shape(a), self.shape(b), trans_b)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![S::zero(); numel(&plan.out_shape)];
        plan.forward(av, bv, &mut out);
        let value = Tensor::new(&plan.out_shape, out)?;
        Ok(self.record(value, &[a, b], Op::MatMul { a, b, trans_b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.record(value, &[a, b], Op::Add { a, b }))
    }

    /// Adds a `[d]` vector to every slice of a `[..., d]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = bv.len();
        if bv.rank() != 1 || xv.shape().last() != Some(&d) {
            return Err(shape_err("add_bias", xv.shape(), bv.shape()));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            row.iter_mut().zip(bv.data()).for_each(|(v, &b)| *v += b);
        }
        let value = Tensor::new(xv.shape(), data)?;
        Ok(self.record(value, &[x, bias], Op::AddBias { x, bias }))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.record(value, &[a, b], Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v * factor).collect())
            .expect("same shape");
        self.record(value, &[x], Op::Scale { x, factor })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.record(Tensor::scalar(total), &[x], Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, S::one() / S::of(n as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.record(value, &[x], Op::Reshape { x }))
    }

    /// `[b, s, c] -> [b, c, s]`.
    pub fn transpose_tokens(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose_last2()?;
        Ok(self.record(value, &[x], Op::Transpose { x }))
    }

    /// Normalizes every slice along the last axis with the biased variance,
    /// then applies `gamma * x_hat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().ok_or_else(|| Error::invalid("layer_norm", "rank-0 input"))?;
        if d == 0 {
            return Err(Error::invalid("layer_norm", "normalized extent is zero"));
        }
        if !(eps >= 0.0) {
            return Err(Error::invalid("layer_norm", "eps must be non-negative"));
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(shape_err("layer_norm", xv.shape(), gv.shape()));
        }
        let rows = xv.len() / d;
        let inv_d = S::one() / S::of(d as f64);
        let eps = S::of(eps);
        let mut out = vec![S::zero(); xv.len()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for (row, dst) in xv.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let rstd = S::one() / (var + eps).sqrt();
            for (((o, &v), &g), &b) in dst.iter_mut().zip(row).zip(gv.data()).zip(bv.data()) {
                *o = g * (v - mean) * rstd + b;
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.record(value, &[x, gamma, beta], Op::LayerNorm { x, gamma, beta, mean: means, rstd: rstds }))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.map(x, silu);
        self.record(value, &[x], Op::Silu { x })
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| S::of(0.5) * v * (S::one() + (v * S::of(core::f64::consts::FRAC_1_SQRT_2)).erf()));
        self.record(value, &[x], Op::Gelu { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| if v > S::zero() { v } else { S::zero() });
        self.record(value, &[x], Op::Relu { x })
    }

    fn map(&self, x: Var, f: impl Fn(S) -> S) -> Tensor<S> {
        let xv = self.value(x);
        Tensor::new(xv.shape(), xv.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = S::of(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mask: Vec<S> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < rate { S::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape(), data)?;
        Ok(self.record(value, &[x], Op::Dropout { x, mask }))
    }

    /// Mean over the token axis, `[b, s, c] -> [b, c]`.
    pub fn global_mean_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [b, s, c] = rank3(xv.shape(), "global_mean_pool")?;
        if s == 0 {
            return Err(Error::invalid("global_mean_pool", "no tokens"));
        }
        let inv = S::one() / S::of(s as f64);
        let mut out = vec![S::zero(); b * c];
        for (plane, dst) in xv.data().chunks_exact(s * c).zip(out.chunks_exact_mut(c)) {
            for tok in plane.chunks_exact(c) {
                dst.iter_mut().zip(tok).for_each(|(o, &v)| *o += v);
            }
            dst.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::new(&[b, c], out)?;
        Ok(self.record(value, &[x], Op::MeanPool { x }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, k) = match *lv.shape() {
            [b, k] => (b, k),
            _ => return Err(Error::Rank { op: "softmax_cross_entropy", expected: 2, shape: lv.shape().to_vec() }),
        };
        if b == 0 || labels.len() != b {
            return Err(shape_err("softmax_cross_entropy", lv.shape(), &[labels.len()]));
        }
        let mut probs = vec![S::zero(); b * k];
        let mut loss = S::zero();
        for (row, (&label, p)) in labels.iter().zip(probs.chunks_exact_mut(k)).enumerate() {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k, row });
            }
            let (lse, max) = log_sum_exp(p, row_of(lv.data(), row, k));
            loss += lse - (lv.data()[row * k + label] - max);
        }
        let value = Tensor::scalar(loss / S::of(b as f64));
        Ok(self.record(value, &[logits], Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// Expands `[..., n]` into `[..., n, G + k]` B-spline basis values.
    pub fn bspline_basis(&mut self, x: Var, grid: SplineGrid) -> Result<Var> {
        grid.validate()?;
        let xv = self.value(x);
        let nb = grid.num_basis();
        let mut out = vec![S::zero(); xv.len() * nb];
        grid.basis_batch(xv.data(), &mut out);
        let mut shape = xv.shape().to_vec();
        shape.push(nb);
        let value = Tensor::new(&shape, out)?;
        Ok(self.record(value, &[x], Op::BSpline { x, grid }))
    }

    /// Runs reverse accumulation from a rank-0 (or single-element) loss.
    pub fn backward(self, loss: Var) -> Result<Gradients<S>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let Tape { params, mut nodes } = self;
        let mut acc = Accum {
            params: (0..params.len()).map(|_| None).collect(),
            nodes: (0..nodes.len()).map(|_| None).collect(),
            nodes_rg: nodes.iter().map(|n| n.requires_grad).collect(),
            params_ref: params,
        };
        match loss.0 {
            Slot::Param(i) => {
                acc.params[i] = Some(vec![S::one()]);
            }
            Slot::Node(i) => acc.nodes[i] = Some(vec![S::one()]),
        }

        let mut leaves: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        for i in (0..nodes.len()).rev() {
            let Some(g) = acc.nodes[i].take() else {
                continue;
            };
            let (before, rest) = nodes.split_at_mut(i);
            let node = &mut rest[0];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    leaves[i] = Some(Tensor::new(node.value.shape(), g)?);
                }
                continue;
            }
            let ctx = Ctx { params, before };
            node_backward(&ctx, node, &g, &mut acc)?;
            // the value is never read again once its own rule has run
            node.value = Tensor::zeros(&[0]);
        }

        let params = acc
            .params
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(params.get(ParamId(i)).shape(), g).expect("param shape")))
            .collect();
        Ok(Gradients { params, leaves })
    }
}

fn row_of<S>(data: &[S], row: usize, k: usize) -> &[S] {
    &data[row * k..(row + 1) * k]
}

/// Writes `softmax(row)` into `probs`; returns `(log(sum(exp(row - max))), max)`.
fn log_sum_exp<S: Scalar>(probs: &mut [S], row: &[S]) -> (S, S) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut z = S::zero();
    for (p, &v) in probs.iter_mut().zip(row) {
        *p = (v - max).exp();
        z += *p;
    }
    probs.iter_mut().for_each(|p| *p /= z);
    (z.ln(), max)
}

fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

fn silu<S: Scalar>(v: S) -> S {
    v * sigmoid(v)
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape { op, lhs: a.to_vec(), rhs: b.to_vec() }
}

/// Read access to values during backward.
struct Ctx<'a, 'p, S> {
    params: &'p ParamStore<S>,
    before: &'a [Node<S>],
}

impl<S: Scalar> Ctx<'_, '_, S> {
    fn value(&self, var: Var) -> &Tensor<S> {
        match var.0 {
            Slot::Param(i) => self.params.get(ParamId(i)),
            Slot::Node(i) => &self.before[i].value,
        }
    }
}

/// Gradient buffers, allocated on first contribution.
struct Accum<'p, S: Scalar> {
    params: Vec<Option<Vec<S>>>,
    nodes: Vec<Option<Vec<S>>>,
    nodes_rg: Vec<bool>,
    params_ref: &'p ParamStore<S>,
}

impl<S: Scalar> Accum<'_, S> {
    /// Buffer to add into, or `None` when `var` takes no gradient.
    fn buf(&mut self, var: Var) -> Option<&mut Vec<S>> {
        let (slot, len) = match var.0 {
            Slot::Param(i) => (&mut self.params[i], self.params_ref.get(ParamId(i)).len()),
            Slot::Node(i) => {
                if !self.nodes_rg[i] {
                    return None;
                }
                (&mut self.nodes[i], 0)
            }
        };
        Some(slot.get_or_insert_with(|| vec![S::zero(); len]))
    }

    /// Like [`Self::buf`] but sized for node `var` with `len` elements.
    fn buf_len(&mut self, var: Var, len: usize) -> Option<&mut [S]> {
        let b = self.buf(var)?;
        if b.is_empty() && len > 0 {
            b.resize(len, S::zero());
        }
        Some(b.as_mut_slice())
    }

    fn add(&mut self, var: Var, g: &[S]) {
        if let Some(b) = self.buf_len(var, g.len()) {
            b.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
        }
    }
}

fn node_backward<S: Scalar>(ctx: &Ctx<'_, '_, S>, node: &Node<S>, g: &[S], acc: &mut Accum<'_, S>) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, trans_b } => {
            let (av, bv) = (ctx.value(*a), ctx.value(*b));
            let plan = MatMulPlan::new(av.shape(), bv.shape(), *trans_b)?;
            if let Some(ga) = acc.buf_len(*a, av.len()) {
                plan.grad_a(g, bv.data(), ga);
            }
            if let Some(gb) = acc.buf_len(*b, bv.len()) {
                plan.grad_b(g, av.data(), gb);
            }
        }
        Op::Add { a, b } => {
            acc.add(*a, g);
            acc.add(*b, g);
        }
        Op::AddBias { x, bias } => {
            acc.add(*x, g);
            let d = ctx.value(*bias).len();
            if let Some(gb) = acc.buf_len(*bias, d) {
                for row in g.chunks_exact(d) {
                    gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                }
            }
        }
        Op::Mul { a, b } => {
            let (av, bv) = (ctx.value(*a).data(), ctx.value(*b).data());
            if let Some(ga) = acc.buf_len(*a, av.len()) {
                ga.iter_mut().zip(g.iter().zip(bv)).for_each(|(o, (&gi, &y))| *o += gi * y);
            }
            if let Some(gb) = acc.buf_len(*b, bv.len()) {
                gb.iter_mut().zip(g.iter().zip(av)).for_each(|(o, (&gi, &x))| *o += gi * x);
            }
        }
        Op::Scale { x, factor } => {
            if let Some(gx) = acc.buf_len(*x, g.len()) {
                gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v * *factor);
            }
        }
        Op::Sum { x } => {
            let n = ctx.value(*x).len();
            if let Some(gx) = acc.buf_len(*x, n) {
                gx.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        Op::Reshape { x } => acc.add(*x, g),
        Op::Transpose { x } => {
            let xv = ctx.value(*x);
            let [b, s, c] = rank3(xv.shape(), "transpose")?;
            if let Some(gx) = acc.buf_len(*x, xv.len()) {
                // g is [b, c, s]; its transpose lands back on [b, s, c]
                let mut tmp = vec![S::zero(); g.len()];
                transpose_into(g, &mut tmp, b, c, s);
                gx.iter_mut().zip(&tmp).for_each(|(o, &v)| *o += v);
            }
        }
        Op::LayerNorm { x, gamma, beta, mean, rstd } => {
            let xv = ctx.value(*x);
            let gv = ctx.value(*gamma).data();
            let d = gv.len();
            let inv_d = S::one() / S::of(d as f64);
            let mut dgamma = vec![S::zero(); d];
            let mut dbeta = vec![S::zero(); d];
            let mut dx = vec![S::zero(); xv.len()];
            let mut dxhat = vec![S::zero(); d];
            for (r, ((row, grow), dxrow)) in
                xv.data().chunks_exact(d).zip(g.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).enumerate()
            {
                let (mu, rs) = (mean[r], rstd[r]);
                let mut m1 = S::zero();
                let mut m2 = S::zero();
                for j in 0..d {
                    let xhat = (row[j] - mu) * rs;
                    dgamma[j] += grow[j] * xhat;
                    dbeta[j] += grow[j];
                    dxhat[j] = grow[j] * gv[j];
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat;
                }
                m1 *= inv_d;
                m2 *= inv_d;
                for j in 0..d {
                    let xhat = (row[j] - mu) * rs;
                    dxrow[j] = rs * (dxhat[j] - m1 - xhat * m2);
                }
            }
            acc.add(*x, &dx);
            acc.add(*gamma, &dgamma);
            acc.add(*beta, &dbeta);
        }
        Op::Silu { x } => {
            let xv = ctx.value(*x).data();
            if let Some(gx) = acc.buf_len(*x, xv.len()) {
                for ((o, &gi), &v) in gx.iter_mut().zip(g).zip(xv) {
                    let s = sigmoid(v);
                    *o += gi * s * (S::one() + v * (S::one() - s));
                }
            }
        }
        Op::Gelu { x } => {
            let xv = ctx.value(*x).data();
            let inv_sqrt_2pi = S::of(0.398_942_280_401_432_7);
            let frac = S::of(core::f64::consts::FRAC_1_SQRT_2);
            if let Some(gx) = acc.buf_len(*x, xv.len()) {
                for ((o, &gi), &v) in gx.iter_mut().zip(g).zip(xv) {
                    let cdf = S::of(0.5) * (S::one() + (v * frac).erf());
                    let pdf = inv_sqrt_2pi * (-(v * v) * S::of(0.5)).exp();
                    *o += gi * (cdf + v * pdf);
                }
            }
        }
        Op::Relu { x } => {
            let xv = ctx.value(*x).data();
            if let Some(gx) = acc.buf_len(*x, xv.len()) {
                for ((o, &gi), &v) in gx.iter_mut().zip(g).zip(xv) {
                    if v > S::zero() {
                        *o += gi;
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(gx) = acc.buf_len(*x, mask.len()) {
                for ((o, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                    *o += gi * m;
                }
            }
        }
        Op::MeanPool { x } => {
            let xv = ctx.value(*x);
            let [_, s, c] = rank3(xv.shape(), "global_mean_pool")?;
            let inv = S::one() / S::of(s as f64);
            if let Some(gx) = acc.buf_len(*x, xv.len()) {
                for (plane, grow) in gx.chunks_exact_mut(s * c).zip(g.chunks_exact(c)) {
                    for tok in plane.chunks_exact_mut(c) {
                        tok.iter_mut().zip(grow).for_each(|(o, &v)| *o += v * inv);
                    }
                }
            }
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let k = probs.len() / labels.len();
            let scale = g[0] / S::of(labels.len() as f64);
            if let Some(gl) = acc.buf_len(*logits, probs.len()) {
                for (r, (grow, prow)) in gl.chunks_exact_mut(k).zip(probs.chunks_exact(k)).enumerate() {
                    for (j, (o, &p)) in grow.iter_mut().zip(prow).enumerate() {
                        let onehot = if j == labels[r] { S::one() } else { S::zero() };
                        *o += (p - onehot) * scale;
                    }
                }
            }
        }
        Op::BSpline { x, grid } => {
            let xv = ctx.value(*x).data();
            let nb = grid.num_basis();
            if let Some(gx) = acc.buf_len(*x, xv.len()) {
                for ((o, &v), grow) in gx.iter_mut().zip(xv).zip(g.chunks_exact(nb)) {
                    if let Some(local) = grid.local(v) {
                        let mut d = S::zero();
                        for r in 0..=grid.order {
                            let j = local.first + r as isize;
                            if j >= 0 && (j as usize) < nb {
                                d += grow[j as usize] * local.derivs[r];
                            }
                        }
                        *o += d;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Shape bookkeeping for batched matrix products with broadcast batch axes.
struct MatMulPlan {
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
    /// `(out batch, a batch, b batch)` triples.
    pairs: Vec<(usize, usize, usize)>,
    out_shape: Vec<usize>,
    /// `b` is a single matrix shared by every batch of `a`.
    shared_b: bool,
}

impl MatMulPlan {
    fn new(a: &[usize], b: &[usize], trans_b: bool) -> Result<Self> {
        let op = if trans_b { "matmul_t" } else { "matmul" };
        if a.len() < 2 || b.len() < 2 {
            return Err(shape_err(op, a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (bk, n) = if trans_b { (b[b.len() - 1], b[b.len() - 2]) } else { (b[b.len() - 2], b[b.len() - 1]) };
        if k != bk {
            return Err(shape_err(op, a, b));
        }
        let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let rank = ab.len().max(bb.len());
        let mut batch = vec![0; rank];
        for i in 0..rank {
            let da = if i + ab.len() >= rank { ab[i + ab.len() - rank] } else { 1 };
            let db = if i + bb.len() >= rank { bb[i + bb.len() - rank] } else { 1 };
            batch[i] = match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(shape_err(op, a, b)),
            };
        }
        let total: usize = batch.iter().product();
        let mut pairs = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for o in 0..total {
            let (mut ia, mut ib) = (0, 0);
            for i in 0..rank {
                if i + ab.len() >= rank {
                    let d = ab[i + ab.len() - rank];
                    ia = ia * d + if d == 1 { 0 } else { idx[i] };
                }
                if i + bb.len() >= rank {
                    let d = bb[i + bb.len() - rank];
                    ib = ib * d + if d == 1 { 0 } else { idx[i] };
                }
            }
            pairs.push((o, ia, ib));
            for i in (0..rank).rev() {
                idx[i] += 1;
                if idx[i] < batch[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        let mut out_shape = batch;
        out_shape.extend([m, n]);
        let shared_b = bb.iter().product::<usize>() == 1 && ab.iter().product::<usize>() == total;
        Ok(MatMulPlan { m, k, n, trans_b, pairs, out_shape, shared_b })
    }

    fn b_mat<'a, S>(&self, b: &'a [S], ib: usize) -> MatRef<'a, S> {
        let blk = self.k * self.n;
        let data = &b[ib * blk..(ib + 1) * blk];
        if self.trans_b {
            MatRef::dense(data, self.n, self.k).t()
        } else {
            MatRef::dense(data, self.k, self.n)
        }
    }

    fn forward<S: Scalar>(&self, a: &[S], b: &[S], out: &mut [S]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.shared_b {
            let rows = self.pairs.len() * m;
            gemm(MatRef::dense(a, rows, k), self.b_mat(b, 0), S::zero(), out);
            return;
        }
        for &(o, ia, ib) in &self.pairs {
            let am = MatRef::dense(&a[ia * m * k..(ia + 1) * m * k], m, k);
            gemm(am, self.b_mat(b, ib), S::zero(), &mut out[o * m * n..(o + 1) * m * n]);
        }
    }

    /// `dA += dC B^T`.
    fn grad_a<S: Scalar>(&self, g: &[S], b: &[S], ga: &mut [S]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.shared_b {
            let rows = self.pairs.len() * m;
            gemm(MatRef::dense(g, rows, n), self.b_mat(b, 0).t(), S::one(), ga);
            return;
        }
        for &(o, ia, ib) in &self.pairs {
            let gm = MatRef::dense(&g[o * m * n..(o + 1) * m * n], m, n);
            gemm(gm, self.b_mat(b, ib).t(), S::one(), &mut ga[ia * m * k..(ia + 1) * m * k]);
        }
    }

    /// `dB += A^T dC`, or `dB += dC^T A` when `b` is stored transposed.
    fn grad_b<S: Scalar>(&self, g: &[S], a: &[S], gb: &mut [S]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let blocks: Vec<(MatRef<'_, S>, MatRef<'_, S>, usize)> = if self.shared_b {
            let rows = self.pairs.len() * m;
            vec![(MatRef::dense(a, rows, k), MatRef::dense(g, rows, n), 0)]
        } else {
            self.pairs
                .iter()
                .map(|&(o, ia, ib)| {
                    (
                        MatRef::dense(&a[ia * m * k..(ia + 1) * m * k], m, k),
                        MatRef::dense(&g[o * m * n..(o + 1) * m * n], m, n),
                        ib,
                    )
                })
                .collect()
        };
        for (am, gm, ib) in blocks {
            let dst = &mut gb[ib * k * n..(ib + 1) * k * n];
            if self.trans_b {
                gemm(gm.t(), am, S::one(), dst);
            } else {
                gemm(am.t(), gm, S::one(), dst);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
        let z = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.value(z), tape.value(a));
        let bad = tape.constant(t(&[3, 1], &[1.0, 1.0, 1.0]));
        let err = tape.matmul(a, bad).unwrap_err();
        assert_eq!(err, Error::Shape { op: "matmul", lhs: vec![2, 2], rhs: vec![3, 1] });
    }

    #[test]
    fn matmul_broadcasts_leading_axes() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let a = tape.leaf(t(&[2, 1, 2, 3], &(0..12).map(f64::from).collect::<Vec<_>>()), true);
        let b = tape.leaf(t(&[3, 3, 2], &(0..18).map(|v| f64::from(v) * 0.5).collect::<Vec<_>>()), true);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 2, 2]);
        // spot check: out[1][2] = a[1][0] @ b[2]
        let av = tape.value(a).data()[6..12].to_vec();
        let bv = tape.value(b).data()[12..18].to_vec();
        let cv = &tape.value(c).data()[(3 + 2) * 4..(3 + 2) * 4 + 4];
        for i in 0..2 {
            for j in 0..2 {
                let e: f64 = (0..3).map(|p| av[i * 3 + p] * bv[p * 2 + j]).sum();
                assert_eq!(cv[i * 2 + j], e);
            }
        }
        let s = tape.sum(c);
        let grads = tape.backward(s).unwrap();
        // d sum / d a[.., i, p] = sum over broadcast batches and j of b[.., p, j]
        let gb = grads.get(b).unwrap();
        assert_eq!(gb.shape(), &[3, 3, 2]);
        let ga = grads.get(a).unwrap();
        assert_eq!(ga.shape(), &[2, 1, 2, 3]);
    }

    #[test]
    fn sum_and_square_gradients() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);

        let mut tape = Tape::new(&store);
        let x = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let y = tape.scale(x, 2.0);
        assert_eq!(tape.backward(y).err(), Some(Error::NonScalarLoss(vec![2])));
    }

    #[test]
    fn transpose_gradient_is_ones() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(Tensor::from_f64(&[2, 3, 4], &[0.3; 24]).unwrap(), true);
        let y = tape.transpose_tokens(x).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 3]);
        let l = tape.sum(y);
        let grads = tape.backward(l).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));

        let mut tape = Tape::new(&store);
        let bad = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.transpose_tokens(bad), Err(Error::Rank { .. })));
    }

    #[test]
    fn layer_norm_values() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]));
        let g = tape.constant(t(&[3], &[1.0; 3]));
        let b = tape.constant(t(&[3], &[0.0; 3]));
        let y = tape.layer_norm(x, g, b, 0.0).unwrap();
        let v = tape.value(y).data();
        let e = (1.5f64).sqrt(); // 1 / sqrt(2/3)
        assert!((v[0] + e).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - e).abs() < 1e-12);
        assert!((v[0] + 1.224_74).abs() < 1e-5);

        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data()[3..].iter().all(|&v| v == 0.0));

        let empty = tape.constant(Tensor::zeros(&[2, 0]));
        let g0 = tape.constant(Tensor::zeros(&[0]));
        assert!(tape.layer_norm(empty, g0, g0, 1e-5).is_err());
    }

    #[test]
    fn layer_norm_standardizes_random_rows() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let d = 64;
        let data: Vec<f64> = (0..10 * d).map(|_| rng.random::<f64>() * 7.0 - 2.0).collect();
        let x = tape.constant(t(&[10, d], &data));
        let g = tape.constant(Tensor::full(&[d], 1.0));
        let b = tape.constant(Tensor::zeros(&[d]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        for row in tape.value(y).data().chunks(d) {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn silu_values() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(t(&[3], &[0.0, 1.0, -20.0]));
        let y = tape.silu(x);
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((v[1] - 0.731_059).abs() < 1e-6);
        assert!(v[2].is_finite() && (v[2] + 4.122_307e-8).abs() < 1e-13);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::full(&[1_000_000], 1.0f64));
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.7, false, &mut rng).unwrap(), x);
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let v = tape.value(y).data();
        let kept = v.iter().filter(|&&e| e != 0.0).count() as f64 / v.len() as f64;
        assert!((kept - 0.5).abs() < 0.005, "{kept}");
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
    }

    #[test]
    fn mean_pool_values_and_gradient() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        // b=1, s=2, c=2: tokens [1, 10] and [3, 20]
        let x = tape.leaf(t(&[1, 2, 2], &[1.0, 10.0, 3.0, 20.0]), true);
        let y = tape.global_mean_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 15.0]);
        let l = tape.sum(y);
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.5; 4]);

        let mut tape = Tape::new(&store);
        let x = tape.constant(t(&[1, 1, 3], &[4.0, 5.0, 6.0]));
        let y = tape.global_mean_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn cross_entropy_values() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let uniform = tape.constant(Tensor::zeros(&[2, 10]));
        let l = tape.softmax_cross_entropy(uniform, &[3, 7]).unwrap();
        assert!((tape.value(l).data()[0] - 10f64.ln()).abs() < 1e-12);

        let mut logits = vec![0.0; 10];
        logits[4] = 1000.0;
        let sat = tape.constant(t(&[1, 10], &logits));
        let l = tape.softmax_cross_entropy(sat, &[4]).unwrap();
        let v = tape.value(l).data()[0];
        assert!((0.0..1e-12).contains(&v));

        assert!(matches!(
            tape.softmax_cross_entropy(sat, &[10]),
            Err(Error::LabelOutOfRange { label: 10, classes: 10, row: 0 })
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let raw = [0.2, -1.0, 0.7, 1.5, 0.0, -0.3];
        let x = tape.leaf(t(&[2, 3], &raw), true);
        let l = tape.softmax_cross_entropy(x, &[2, 0]).unwrap();
        let grads = tape.backward(l).unwrap();
        let g = grads.get(x).unwrap().data();
        for (r, label) in [2usize, 0].iter().enumerate() {
            let row = &raw[r * 3..r * 3 + 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                let p = row[j].exp() / z;
                let e = (p - if j == *label { 1.0 } else { 0.0 }) / 2.0;
                assert!((g[r * 3 + j] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn params_receive_gradients_without_copy() {
        let mut store = ParamStore::new();
        let w = store.add("w", t(&[2], &[3.0, -1.0]));
        let mut tape = Tape::new(&store);
        let wv = tape.param(w);
        let x = tape.constant(t(&[2], &[0.5, 2.0]));
        let p = tape.mul(wv, x).unwrap();
        let l = tape.sum(p);
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.param(w).unwrap().data(), &[0.5, 2.0]);
        assert!(grads.get(x).is_none());
    }
}
