//! The training loop, evaluation and k-fold cross-validation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, kfold_split, Augmentation, Fold, ImageSet};
use crate::error::{Error, Result};
use crate::metrics::{argmax, ConfusionMatrix, Metrics};
use crate::model::{MixerConfig, Mode, Model, ModelKind};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tape::Tape;

/// Learning rate found by the hyperparameter search for KAN-Mixers.
pub const KAN_MIXERS_LR: f64 = 0.000_128_201_004_189_169_18;
/// Adam's conventional default, used by every other model.
pub const DEFAULT_LR: f64 = 0.001;

pub fn default_lr(kind: ModelKind) -> f64 {
    match kind {
        ModelKind::KanMixers => KAN_MIXERS_LR,
        _ => DEFAULT_LR,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub model: MixerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub folds: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
    /// Evaluate the validation set after every epoch, not only the last.
    pub eval_every_epoch: bool,
    /// Also evaluate the final model on its own training images.
    pub eval_train: bool,
}

impl TrainConfig {
    /// 50 epochs, batch 64, 5 folds, augmentation on, model-specific learning rate.
    pub fn new(kind: ModelKind, model: MixerConfig) -> Self {
        TrainConfig {
            kind,
            model,
            epochs: 50,
            batch_size: 64,
            lr: default_lr(kind),
            folds: 5,
            seed: 0,
            augmentation: Augmentation::default(),
            eval_every_epoch: true,
            eval_train: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("train config", "batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("train config", "lr must be positive"));
        }
        self.augmentation.validate()?;
        self.model.validate()
    }
}

/// Independent random streams of one fold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    Augment = 2,
    Dropout = 3,
}

/// Generator for `stream` of `fold`, derived from the run seed only.
pub fn fold_rng(seed: u64, fold: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((fold as u64) << 8) | stream as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub epochs: Vec<EpochRecord>,
    pub val: Metrics,
    pub val_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_eval: Option<Metrics>,
    /// Filled in by callers that own a clock; never serialized.
    #[serde(skip)]
    pub wall_time_secs: Option<f64>,
}

impl FoldResult {
    pub fn accuracy(&self) -> f64 {
        self.val.accuracy
    }
}

/// Classifies `indices` of `data` with augmentation and dropout off.
pub fn evaluate<S: Scalar>(model: &Model<S>, data: &ImageSet, indices: &[usize], batch_size: usize) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::invalid("evaluate", "empty index set"));
    }
    let classes = model.config.num_classes;
    let mut cm = ConfusionMatrix::new(classes);
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, labels) = data.gather::<S, ChaCha8Rng>(chunk, None)?;
        let mut tape = Tape::new(&model.params);
        let logits = model.forward(&mut tape, &images, Mode::Eval, &mut unused)?;
        for (row, &label) in tape.value(logits).data().chunks_exact(classes).zip(&labels) {
            cm.record(label, argmax(row));
        }
    }
    cm.metrics()
}

/// Trains `model` in place on `train` and reports metrics on `val`.
///
/// `on_epoch` sees every epoch record as soon as it is complete.
pub fn train_model<S: Scalar>(
    model: &mut Model<S>,
    train: (&ImageSet, &[usize]),
    val: (&ImageSet, &[usize]),
    cfg: &TrainConfig,
    fold: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FoldResult> {
    cfg.validate()?;
    let (train_set, train_idx) = train;
    let (val_set, val_idx) = val;
    if train_idx.is_empty() && cfg.epochs > 0 {
        return Err(Error::invalid("train", "empty training set"));
    }
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &model.params);
    let mut shuffle_rng = fold_rng(cfg.seed, fold, Stream::Shuffle);
    let mut augment_rng = fold_rng(cfg.seed, fold, Stream::Augment);
    let mut dropout_rng = fold_rng(cfg.seed, fold, Stream::Dropout);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut last_val = None;

    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, batch) in batches(train_idx, cfg.batch_size, true, &mut shuffle_rng).iter().enumerate() {
            let (images, labels) = train_set.gather::<S, _>(batch, Some((&cfg.augmentation, &mut augment_rng)))?;
            let mut tape = Tape::new(&model.params);
            let logits = model.forward(&mut tape, &images, Mode::Train, &mut dropout_rng)?;
            let classes = model.config.num_classes;
            correct += tape
                .value(logits)
                .data()
                .chunks_exact(classes)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let loss_value = tape.value(loss).data()[0].as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite { what: "loss", at: format!("fold {fold} epoch {epoch} batch {}", b + 1) });
            }
            let grads = tape.backward(loss)?;
            adam.step(&mut model.params, &grads)?;
            loss_sum += loss_value * batch.len() as f64;
            seen += batch.len();
        }
        let val_acc = if cfg.eval_every_epoch || epoch == cfg.epochs {
            let m = evaluate(model, val_set, val_idx, cfg.batch_size)?;
            let acc = m.accuracy;
            last_val = Some(m);
            Some(acc)
        } else {
            None
        };
        let record = EpochRecord { epoch, train_loss: loss_sum / seen as f64, train_acc: correct as f64 / seen as f64, val_acc };
        on_epoch(&record);
        records.push(record);
    }

    let val_metrics = match last_val {
        Some(m) => m,
        None => evaluate(model, val_set, val_idx, cfg.batch_size)?,
    };
    let train_eval = if cfg.eval_train { Some(evaluate(model, train_set, train_idx, cfg.batch_size)?) } else { None };
    Ok(FoldResult { fold, epochs: records, val: val_metrics, val_size: val_idx.len(), train_eval, wall_time_secs: None })
}

/// Builds a fresh model for `fold` and trains it. With `test` given, the
/// final model is scored on the whole test set instead of the validation fold.
pub fn run_fold<S: Scalar>(
    cfg: &TrainConfig,
    data: &ImageSet,
    fold: &Fold,
    test: Option<&ImageSet>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FoldResult> {
    train_fold::<S>(cfg, data, fold, test, on_epoch).map(|(_, r)| r)
}

/// [`run_fold`], also returning the trained model.
pub fn train_fold<S: Scalar>(
    cfg: &TrainConfig,
    data: &ImageSet,
    fold: &Fold,
    test: Option<&ImageSet>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model<S>, FoldResult)> {
    let mut model = Model::<S>::build(cfg.kind, &cfg.model, &mut fold_rng(cfg.seed, fold.index, Stream::Init))?;
    let all_test: Vec<usize>;
    let val = match test {
        Some(t) => {
            all_test = (0..t.len()).collect();
            (t, &all_test[..])
        }
        None => (data, &fold.val[..]),
    };
    let result = train_model(&mut model, (data, &fold.train), val, cfg, fold.index, on_epoch)?;
    Ok((model, result))
}

/// k-fold cross-validation with one fresh model per fold, run serially.
pub fn cross_validate<S: Scalar>(cfg: &TrainConfig, data: &ImageSet) -> Result<Vec<FoldResult>> {
    let folds = kfold_split(data.len(), cfg.folds, cfg.seed)?;
    folds.iter().map(|f| run_fold::<S>(cfg, data, f, None, &mut |_| {})).collect()
}

/// Mean and standard deviation, population (divide by n) or sample (n - 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64], population: bool) -> Result<Self> {
        let n = values.len();
        if n == 0 || (!population && n < 2) {
            return Err(Error::invalid("summary", "not enough values"));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let denom = if population { n } else { n - 1 } as f64;
        Ok(Summary { mean, std: num_traits::Float::sqrt(ss / denom), n })
    }

    /// `0.9030 ± 0.0033`.
    pub fn display(&self) -> String {
        format!("{:.4} ± {:.4}", self.mean, self.std)
    }
}
