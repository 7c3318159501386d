//! Run configuration files and resolution of flags over file over defaults.

use std::path::Path;

use kanmix_core::train::default_lr;
use kanmix_core::{Augmentation, MixerConfig, ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::results::{read_json, write_json};

/// Every field is optional; absent fields fall through to the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(model, patch_size, dim, depth, token_hidden, channel_hidden, dropout, lr, epochs, batch_size, folds, seed, augment)
    }

    /// Fills unset fields with the defaults for `in_channels`-channel images.
    pub fn resolve(&self, in_channels: usize) -> Result<TrainConfig> {
        let kind = self.model.unwrap_or(ModelKind::KanMixers);
        let standard = MixerConfig::standard(in_channels);
        let mut model = MixerConfig::new(
            in_channels,
            self.patch_size.unwrap_or(standard.patch_size),
            self.dim.unwrap_or(standard.dim),
            self.depth.unwrap_or(standard.depth),
        );
        if let Some(t) = self.token_hidden {
            model.token_hidden = t;
        }
        if let Some(c) = self.channel_hidden {
            model.channel_hidden = c;
        }
        if let Some(d) = self.dropout {
            model.dropout = d;
        }
        let mut cfg = TrainConfig::new(kind, model);
        cfg.lr = self.lr.unwrap_or(default_lr(kind));
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.folds = self.folds.unwrap_or(cfg.folds);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        if self.augment == Some(false) {
            cfg.augmentation = Augmentation::off();
        }
        if cfg.folds < 2 {
            return Err(Error::Usage(format!("--folds must be at least 2, got {}", cfg.folds)));
        }
        cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(cfg)
    }
}
