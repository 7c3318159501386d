//! Core of the `kanmix` toolkit: a small reverse-mode autodiff tape, B-spline
//! KAN layers, KAN-Mixers and baseline classifiers, Adam, the k-fold training
//! loop, classification metrics and the statistics used to compare models.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, dataset decoding and the command-line front end live
//! in the `kanmix` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kan;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod search;
pub mod spline;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod train;

pub use data::{Augmentation, ImageSet, Split};
pub use error::{Error, Result};
pub use kan::KanLinear;
pub use metrics::{ConfusionMatrix, Metrics};
pub use model::{MixerConfig, Mode, Model, ModelKind};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use spline::SplineGrid;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use train::{FoldResult, TrainConfig};
