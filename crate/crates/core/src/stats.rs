//! Paired significance testing and the summaries used to compare models.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::Summary;

/// Largest sample size for which the exact null distribution is enumerated.
pub const MAX_EXACT_N: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub t_plus: f64,
    pub t_minus: f64,
    /// `min(t_plus, t_minus)`.
    pub w: f64,
    /// Exact two-sided p-value.
    pub p: f64,
    /// Every difference was zero; `p` is 1 by convention.
    pub all_zero: bool,
}

/// Mid-ranks of `values` (1-based), ties sharing the mean of their positions.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Exact Wilcoxon signed-rank test on paired differences.
///
/// Zeros are dropped, absolute values are mid-ranked and the p-value is
/// twice the share of all `2^n` sign assignments whose positive rank sum is
/// at most the observed `W`, capped at 1.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<Wilcoxon> {
    if diffs.is_empty() {
        return Err(Error::invalid("wilcoxon", "no differences"));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("wilcoxon", "non-finite difference"));
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Ok(Wilcoxon { n: 0, t_plus: 0.0, t_minus: 0.0, w: 0.0, p: 1.0, all_zero: true });
    }
    if n > MAX_EXACT_N {
        return Err(Error::invalid("wilcoxon", alloc::format!("{n} pairs exceed the exact limit of {MAX_EXACT_N}")));
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    // doubled mid-ranks are integers, so the enumeration compares exactly
    let ranks2: Vec<u64> = mid_ranks(&abs).iter().map(|r| (r * 2.0) as u64).collect();
    let t_plus2: u64 = nonzero.iter().zip(&ranks2).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total2: u64 = ranks2.iter().sum();
    let w2 = t_plus2.min(total2 - t_plus2);

    let mut at_most = 0u64;
    for mask in 0u64..(1 << n) {
        let mut s = 0;
        for (i, r) in ranks2.iter().enumerate() {
            if mask >> i & 1 == 1 {
                s += r;
            }
        }
        if s <= w2 {
            at_most += 1;
        }
    }
    let p = (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0);
    Ok(Wilcoxon {
        n,
        t_plus: t_plus2 as f64 / 2.0,
        t_minus: (total2 - t_plus2) as f64 / 2.0,
        w: w2 as f64 / 2.0,
        p,
        all_zero: false,
    })
}

/// Outcome of comparing a model against the reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// `=`: no significant difference.
    Equivalent,
    /// `+`: the model is significantly worse than the reference.
    Inferior,
    /// `-`: the model is significantly better than the reference.
    Superior,
}

impl Verdict {
    pub fn symbol(self) -> &'static str {
        match self {
            Verdict::Equivalent => "=",
            Verdict::Inferior => "+",
            Verdict::Superior => "-",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

pub fn verdict(p: f64, alpha: f64, mean_model: f64, mean_reference: f64) -> Result<Verdict> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("verdict", "alpha must be in (0, 1)"));
    }
    Ok(if p >= alpha {
        Verdict::Equivalent
    } else if mean_model < mean_reference {
        Verdict::Inferior
    } else {
        Verdict::Superior
    })
}

/// `100 * (reference - model) / reference`.
pub fn percent_difference(acc_reference: f64, acc_model: f64) -> Result<f64> {
    if !(acc_reference > 0.0) {
        return Err(Error::invalid("percent difference", "reference accuracy must be positive"));
    }
    Ok(100.0 * (acc_reference - acc_model) / acc_reference)
}

/// Per-fold accuracies of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model: String,
    pub fold_accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub model: String,
    pub mean: f64,
    pub std: f64,
    /// Empty for the reference row.
    pub verdicts: Vec<(f64, Verdict)>,
    pub p: Option<f64>,
    pub difference_pct: Option<f64>,
}

/// Rows sorted by ascending mean accuracy with the reference last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceTable {
    pub alphas: Vec<f64>,
    pub rows: Vec<SignificanceRow>,
}

pub fn tabulate(runs: &[ModelRun], reference: &str, alphas: &[f64], population_std: bool) -> Result<SignificanceTable> {
    let reference_run = runs
        .iter()
        .find(|r| r.model == reference)
        .ok_or_else(|| Error::invalid("tabulate", alloc::format!("reference model {reference} missing")))?;
    let ref_summary = Summary::of(&reference_run.fold_accuracies, population_std)?;
    let mut rows = Vec::new();
    for run in runs.iter().filter(|r| r.model != reference) {
        if run.fold_accuracies.len() != reference_run.fold_accuracies.len() {
            return Err(Error::invalid("tabulate", alloc::format!("{} is not paired with {reference}", run.model)));
        }
        let s = Summary::of(&run.fold_accuracies, population_std)?;
        let diffs: Vec<f64> =
            reference_run.fold_accuracies.iter().zip(&run.fold_accuracies).map(|(r, m)| r - m).collect();
        let test = wilcoxon_signed_rank(&diffs)?;
        let verdicts =
            alphas.iter().map(|&a| verdict(test.p, a, s.mean, ref_summary.mean).map(|v| (a, v))).collect::<Result<_>>()?;
        rows.push(SignificanceRow {
            model: run.model.clone(),
            mean: s.mean,
            std: s.std,
            verdicts,
            p: Some(test.p),
            difference_pct: Some(percent_difference(ref_summary.mean, s.mean)?),
        });
    }
    rows.sort_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap_or(Ordering::Equal));
    rows.push(SignificanceRow {
        model: reference_run.model.clone(),
        mean: ref_summary.mean,
        std: ref_summary.std,
        verdicts: Vec::new(),
        p: None,
        difference_pct: None,
    });
    Ok(SignificanceTable { alphas: alphas.to_vec(), rows })
}

/// Linear-interpolated quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median", "no values"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(quantile_sorted(&v, 0.5))
}

/// Silverman's rule: `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to
/// `sd` when the IQR is zero. Zero for constant data.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Gaussian kernel density estimate at `points`; `None` when the bandwidth is zero.
pub fn gaussian_kde(values: &[f64], points: &[f64]) -> Option<Vec<f64>> {
    let h = silverman_bandwidth(values);
    if !(h > 0.0) {
        return None;
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * core::f64::consts::PI).sqrt());
    Some(
        points
            .iter()
            .map(|&x| values.iter().map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>() * norm)
            .collect(),
    )
}
