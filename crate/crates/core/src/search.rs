//! Random hyperparameter search for KAN-Mixers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MixerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrScale {
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub patch_sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub depths: Vec<usize>,
    pub lr_min: f64,
    pub lr_max: f64,
    pub lr_scale: LrScale,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            patch_sizes: vec![4, 8, 16],
            dims: vec![64, 128, 256],
            depths: vec![6, 8, 10],
            lr_min: 1e-4,
            lr_max: 1e-3,
            lr_scale: LrScale::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub lr: f64,
    pub lr_scale: LrScale,
}

impl TrialConfig {
    /// `base` with this trial's patch size, width and depth (hidden widths follow).
    pub fn apply(&self, base: &MixerConfig) -> MixerConfig {
        let mut cfg = MixerConfig::new(base.in_channels, self.patch_size, self.dim, self.depth);
        cfg.image_size = base.image_size;
        cfg.token_hidden = cfg.tokens();
        cfg.num_classes = base.num_classes;
        cfg.dropout = base.dropout;
        cfg.grid = base.grid;
        cfg.linear_embedding = base.linear_embedding;
        cfg
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.patch_sizes.is_empty() || self.dims.is_empty() || self.depths.is_empty() {
            return Err(Error::invalid("search space", "every discrete set needs a value"));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::invalid("search space", "need 0 < lr_min <= lr_max"));
        }
        Ok(())
    }

    pub fn contains(&self, t: &TrialConfig) -> bool {
        self.patch_sizes.contains(&t.patch_size)
            && self.dims.contains(&t.dim)
            && self.depths.contains(&t.depth)
            && (self.lr_min..=self.lr_max).contains(&t.lr)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialConfig {
        let patch_size = *self.patch_sizes.choose(rng).expect("validated");
        let dim = *self.dims.choose(rng).expect("validated");
        let depth = *self.depths.choose(rng).expect("validated");
        let u: f64 = rng.random();
        let lr = match self.lr_scale {
            LrScale::Linear => self.lr_min + u * (self.lr_max - self.lr_min),
            LrScale::Log => (self.lr_min.ln() + u * (self.lr_max.ln() - self.lr_min.ln())).exp(),
        };
        TrialConfig { patch_size, dim, depth, lr: lr.clamp(self.lr_min, self.lr_max), lr_scale: self.lr_scale }
    }

    pub fn sample_trials(&self, trials: usize, seed: u64) -> Result<Vec<TrialConfig>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..trials).map(|_| self.sample(&mut rng)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub config: TrialConfig,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: Option<f64>,
    /// 1 for the best successful trial; `None` for failed ones.
    pub rank: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: usize,
    pub trials: Vec<TrialResult>,
}

impl SearchOutcome {
    pub fn best_trial(&self) -> &TrialResult {
        &self.trials[self.best]
    }
}

/// Scores each sampled configuration with `evaluate`, which returns per-fold
/// validation accuracies. Failed trials are kept but excluded from ranking;
/// ties go to the earlier trial.
pub fn random_search<E>(space: &SearchSpace, trials: usize, seed: u64, mut evaluate: E) -> Result<SearchOutcome>
where
    E: FnMut(usize, &TrialConfig) -> Result<Vec<f64>>,
{
    if trials == 0 {
        return Err(Error::invalid("random search", "need at least one trial"));
    }
    let configs = space.sample_trials(trials, seed)?;
    let results: Vec<TrialResult> = configs
        .into_iter()
        .enumerate()
        .map(|(trial, config)| {
            let scored = evaluate(trial, &config).and_then(|accs| {
                if accs.is_empty() {
                    Err(Error::invalid("random search", "no fold accuracies"))
                } else {
                    Ok(accs)
                }
            });
            match scored {
                Ok(accs) => {
                    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                    TrialResult { trial, config, fold_accuracies: accs, mean_accuracy: Some(mean), rank: None, error: None }
                }
                Err(e) => TrialResult {
                    trial,
                    config,
                    fold_accuracies: Vec::new(),
                    mean_accuracy: None,
                    rank: None,
                    error: Some(alloc::format!("{e}")),
                },
            }
        })
        .collect();
    rank(results)
}

fn rank(mut results: Vec<TrialResult>) -> Result<SearchOutcome> {
    let mut order: Vec<usize> = (0..results.len()).filter(|&i| results[i].mean_accuracy.is_some()).collect();
    if order.is_empty() {
        return Err(Error::invalid("random search", "every trial failed"));
    }
    // stable sort keeps earlier trials ahead on ties
    order.sort_by(|&a, &b| {
        results[b].mean_accuracy.partial_cmp(&results[a].mean_accuracy).unwrap_or(Ordering::Equal)
    });
    for (r, &i) in order.iter().enumerate() {
        results[i].rank = Some(r + 1);
    }
    Ok(SearchOutcome { best: order[0], trials: results })
}
