//! Result files: per-fold JSON, per-epoch CSV, run summaries, manifests and
//! the significance table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kanmix_core::stats::{SignificanceTable, Verdict};
use kanmix_core::FoldResult;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

/// SHA-256 of the validation indices, identifying a fold definition.
pub fn fingerprint(indices: &[usize]) -> String {
    let mut h = Sha256::new();
    for &i in indices {
        h.update((i as u64).to_le_bytes());
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One trained fold as written to `fold_<i>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldFile {
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub folds: usize,
    pub fold: usize,
    pub train_size: usize,
    /// Scored on the held-out test split rather than the validation fold.
    pub test_split: bool,
    pub val_fingerprint: String,
    pub result: FoldResult,
}

pub fn fold_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold_{fold}.json"))
}

/// Fold files of one model directory, ordered by fold index.
pub fn read_folds(dir: &Path) -> Result<Vec<FoldFile>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("fold_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    let mut folds = paths.iter().map(|p| read_json::<FoldFile>(p)).collect::<Result<Vec<_>>>()?;
    folds.sort_by_key(|f| f.fold);
    Ok(folds)
}

/// `epoch,fold,train_loss,train_acc,val_acc` rows, fold-major.
pub fn epochs_csv(results: &[FoldResult]) -> String {
    let mut out = String::from("epoch,fold,train_loss,train_acc,val_acc\n");
    for r in results {
        for e in &r.epochs {
            let val = e.val_acc.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", e.epoch, r.fold, e.train_loss, e.train_acc, val);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub model: String,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub population_std: bool,
    pub display: String,
}

/// Written once per command invocation; the only place wall-clock values appear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub precision: String,
    pub deterministic: bool,
    pub git_describe: String,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub out_dir: PathBuf,
    pub fold_wall_secs: Vec<f64>,
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn alpha_label(a: f64) -> String {
    format!("{a:.2}")
}

fn verdict_at(verdicts: &[(f64, Verdict)], alpha: f64) -> &'static str {
    verdicts.iter().find(|(a, _)| *a == alpha).map(|(_, v)| v.symbol()).unwrap_or("")
}

pub fn significance_csv(table: &SignificanceTable) -> String {
    let mut out = String::from("model,mean,std,p_value");
    for &a in &table.alphas {
        let _ = write!(out, ",verdict_{}", alpha_label(a));
    }
    out.push_str(",difference_pct\n");
    for row in &table.rows {
        let _ = write!(out, "{},{},{},{}", row.model, row.mean, row.std, row.p.map(|p| p.to_string()).unwrap_or_default());
        for &a in &table.alphas {
            let _ = write!(out, ",{}", verdict_at(&row.verdicts, a));
        }
        let _ = writeln!(out, ",{}", row.difference_pct.map(|d| format!("{d:.2}")).unwrap_or_default());
    }
    out
}

/// Plain-text rendering in the layout of the comparison tables.
pub fn significance_text(table: &SignificanceTable) -> String {
    let mut out = format!("{:<12} {:>8} {:>8}", "Model", "Accuracy", "Std");
    for &a in &table.alphas {
        let _ = write!(out, " {:>7}", format!("p={}", alpha_label(a)));
    }
    out.push_str(&format!(" {:>14}\n", "Difference (%)"));
    for row in &table.rows {
        let _ = write!(out, "{:<12} {:>8.4} {:>8.4}", row.model, row.mean, row.std);
        for &a in &table.alphas {
            let _ = write!(out, " {:>7}", verdict_at(&row.verdicts, a));
        }
        let diff = row.difference_pct.map(|d| format!("{d:.2}%")).unwrap_or_default();
        let _ = writeln!(out, " {diff:>14}");
    }
    out
}
