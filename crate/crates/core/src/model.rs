//! KAN-Mixers and the three comparison models.
//!
//! All four share one entry point, [`Model::forward`], mapping an image batch
//! `[b, c, H, W]` to logits `[b, classes]`.
//!
//! Mixer models run `patchify -> embed -> blocks -> mean over tokens -> head`.
//! A block applies token mixing and then channel mixing, each as a residual
//! branch:
//!
//! ```text
//! U = X + T(W2(drop(W1(T(LN1(X))))))      // mixes along tokens, T swaps tokens/channels
//! Y = U + W4(drop(W3(LN2(U))))            // mixes along channels
//! ```
//!
//! Layer norms act on the channel axis of the untransposed tensor. In
//! KAN-Mixers `W1..W4`, the patch embedding and the head are KAN layers; the
//! MLP-Mixer variant uses affine layers with a GELU after `W1` and `W3`.
//!
//! The baselines are fixed topologies on flattened pixels: MLP
//! `in -> 256 -> 128 -> classes` with ReLU, KAN `in -> 64 -> classes`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::KanLinear;
use crate::nn::{Dense, LayerNorm, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::spline::SplineGrid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const MLP_HIDDEN: [usize; 2] = [256, 128];
pub const KAN_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    KanMixers,
    MlpMixer,
    Mlp,
    Kan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::KanMixers, ModelKind::MlpMixer, ModelKind::Mlp, ModelKind::Kan];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::KanMixers => "kan-mixers",
            ModelKind::MlpMixer => "mlp-mixer",
            ModelKind::Mlp => "mlp",
            ModelKind::Kan => "kan",
        }
    }

    /// Display name used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::KanMixers => "KAN-Mixers",
            ModelKind::MlpMixer => "MLP-Mixer",
            ModelKind::Mlp => "MLP",
            ModelKind::Kan => "KAN",
        }
    }

    pub fn is_mixer(self) -> bool {
        matches!(self, ModelKind::KanMixers | ModelKind::MlpMixer)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid("model kind", format!("unknown model `{s}`")))
    }
}

/// Architecture hyperparameters shared by all model kinds.
///
/// The baselines only read `image_size`, `in_channels`, `num_classes` and `grid`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub token_hidden: usize,
    pub channel_hidden: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub grid: SplineGrid,
    /// Use an affine patch embedding even in KAN-Mixers.
    #[serde(default)]
    pub linear_embedding: bool,
}

impl MixerConfig {
    /// 32x32 inputs, hidden widths `S` (tokens) and `2 * dim` (channels), dropout 0.1.
    pub fn new(in_channels: usize, patch_size: usize, dim: usize, depth: usize) -> Self {
        let image_size: usize = 32;
        let side = image_size.checked_div(patch_size).unwrap_or(0);
        MixerConfig {
            image_size,
            in_channels,
            patch_size,
            dim,
            depth,
            token_hidden: side * side,
            channel_hidden: 2 * dim,
            dropout: 0.1,
            num_classes: 10,
            grid: SplineGrid::default(),
            linear_embedding: false,
        }
    }

    /// Patch 4, dim 256, 8 layers: the best configuration of the hyperparameter search.
    pub fn standard(in_channels: usize) -> Self {
        Self::new(in_channels, 4, 256, 8)
    }

    pub fn tokens(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn input_dim(&self) -> usize {
        self.in_channels * self.image_size * self.image_size
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("in_channels", self.in_channels),
            ("patch_size", self.patch_size),
            ("dim", self.dim),
            ("depth", self.depth),
            ("token_hidden", self.token_hidden),
            ("channel_hidden", self.channel_hidden),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid("mixer config", format!("{name} must be at least 1")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(
                "mixer config",
                format!("image size {} not divisible by patch size {}", self.image_size, self.patch_size),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("mixer config", "dropout must be in [0, 1)"));
        }
        self.grid.validate()
    }
}

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Cuts `[c, H, W]` into non-overlapping `p x p` patches: `[S, p * p * c]`.
///
/// Patches are ordered row-major over the image; inside a patch the features
/// run channel-major, then row-major over pixels.
pub fn patchify<S: Scalar>(image: &Tensor<S>, p: usize) -> Result<Tensor<S>> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::Rank { op: "patchify", expected: 3, shape: image.shape().to_vec() }),
    };
    let mut out = vec![S::zero(); image.len()];
    patchify_into(image.data(), c, h, w, p, &mut out)?;
    Tensor::new(&[(h / p) * (w / p), p * p * c], out)
}

fn patchify_into<S: Copy>(src: &[S], c: usize, h: usize, w: usize, p: usize, out: &mut [S]) -> Result<()> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::invalid("patchify", format!("{h}x{w} image not divisible into {p}x{p} patches")));
    }
    let (ph, pw) = (h / p, w / p);
    let feat = p * p * c;
    for pi in 0..ph {
        for pj in 0..pw {
            let tok = &mut out[(pi * pw + pj) * feat..][..feat];
            for ch in 0..c {
                for r in 0..p {
                    let row = &src[ch * h * w + (pi * p + r) * w + pj * p..][..p];
                    tok[ch * p * p + r * p..][..p].copy_from_slice(row);
                }
            }
        }
    }
    Ok(())
}

/// Inverse of [`patchify`].
pub fn unpatchify<S: Scalar>(tokens: &Tensor<S>, c: usize, h: usize, w: usize, p: usize) -> Result<Tensor<S>> {
    let (pw, feat) = (w / p, p * p * c);
    if tokens.shape() != [(h / p) * pw, feat] {
        return Err(Error::Shape { op: "unpatchify", lhs: tokens.shape().to_vec(), rhs: vec![c, h, w] });
    }
    let mut out = vec![S::zero(); tokens.len()];
    for (t, tok) in tokens.data().chunks_exact(feat).enumerate() {
        let (pi, pj) = (t / pw, t % pw);
        for ch in 0..c {
            for r in 0..p {
                out[ch * h * w + (pi * p + r) * w + pj * p..][..p].copy_from_slice(&tok[ch * p * p + r * p..][..p]);
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// One residual token-mixing plus channel-mixing unit.
#[derive(Clone, Debug, PartialEq)]
pub struct MixerBlock {
    pub norm1: LayerNorm,
    pub token: [Dense; 2],
    pub norm2: LayerNorm,
    pub channel: [Dense; 2],
    pub dropout: f64,
}

impl MixerBlock {
    fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        kind: ModelKind,
        cfg: &MixerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (s, c) = (cfg.tokens(), cfg.dim);
        let mut dense = |store: &mut ParamStore<S>, suffix: &str, n_in, n_out| {
            let n = format!("{name}.{suffix}");
            match kind {
                ModelKind::MlpMixer => Dense::linear(store, &n, n_in, n_out, rng),
                _ => Dense::kan(store, &n, n_in, n_out, cfg.grid, rng),
            }
        };
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), c);
        let token = [dense(store, "token.0", s, cfg.token_hidden)?, dense(store, "token.1", cfg.token_hidden, s)?];
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), c);
        let channel =
            [dense(store, "channel.0", c, cfg.channel_hidden)?, dense(store, "channel.1", cfg.channel_hidden, c)?];
        Ok(MixerBlock { norm1, token, norm2, channel, dropout: cfg.dropout })
    }

    pub fn param_count(&self) -> usize {
        self.norm1.param_count()
            + self.norm2.param_count()
            + self.token.iter().chain(&self.channel).map(Dense::param_count).sum::<usize>()
    }

    /// `[b, S, C] -> [b, S, C]`.
    pub fn forward<S: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let h = self.norm1.forward(tape, x)?;
        let t = tape.transpose_tokens(h)?;
        let t = self.mix(tape, &self.token, t, mode, rng)?;
        let t = tape.transpose_tokens(t)?;
        let u = tape.add(x, t)?;

        let h = self.norm2.forward(tape, u)?;
        let c = self.mix(tape, &self.channel, h, mode, rng)?;
        tape.add(u, c)
    }

    fn mix<S: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        pair: &[Dense; 2],
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let mut h = pair[0].forward(tape, x)?;
        if let Dense::Linear(_) = pair[0] {
            h = tape.gelu(h);
        }
        let h = tape.dropout(h, self.dropout, mode == Mode::Train, rng)?;
        pair[1].forward(tape, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Mixer { embed: Dense, blocks: Vec<MixerBlock>, head: Dense },
    Mlp { layers: Vec<Linear> },
    Kan { layers: Vec<KanLinear> },
}

/// A classifier together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub kind: ModelKind,
    pub config: MixerConfig,
    pub params: ParamStore<S>,
    pub body: Body,
}

impl<S: Scalar> Model<S> {
    /// Builds and initializes any of the four model kinds.
    pub fn build<R: Rng + ?Sized>(kind: ModelKind, config: &MixerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let body = match kind {
            ModelKind::KanMixers | ModelKind::MlpMixer => {
                let embed = if kind == ModelKind::MlpMixer || config.linear_embedding {
                    Dense::linear(&mut store, "embed", config.patch_dim(), config.dim, rng)?
                } else {
                    Dense::kan(&mut store, "embed", config.patch_dim(), config.dim, config.grid, rng)?
                };
                let blocks = (0..config.depth)
                    .map(|i| MixerBlock::new(&mut store, &format!("blocks.{i}"), kind, config, rng))
                    .collect::<Result<Vec<_>>>()?;
                let head = match kind {
                    ModelKind::MlpMixer => Dense::linear(&mut store, "head", config.dim, config.num_classes, rng)?,
                    _ => Dense::kan(&mut store, "head", config.dim, config.num_classes, config.grid, rng)?,
                };
                Body::Mixer { embed, blocks, head }
            }
            ModelKind::Mlp => {
                let widths = [config.input_dim(), MLP_HIDDEN[0], MLP_HIDDEN[1], config.num_classes];
                let layers = widths
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| Linear::new(&mut store, &format!("layers.{i}"), w[0], w[1], rng))
                    .collect::<Result<Vec<_>>>()?;
                Body::Mlp { layers }
            }
            ModelKind::Kan => {
                let widths = [config.input_dim(), KAN_HIDDEN, config.num_classes];
                let layers = widths
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| KanLinear::new(&mut store, &format!("layers.{i}"), w[0], w[1], config.grid, rng))
                    .collect::<Result<Vec<_>>>()?;
                Body::Kan { layers }
            }
        };
        Ok(Model { kind, config: config.clone(), params: store, body })
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Logits `[b, classes]` for images `[b, c, H, W]`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        images: &Tensor<S>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let cfg = &self.config;
        let expected = [cfg.in_channels, cfg.image_size, cfg.image_size];
        if images.rank() != 4 || images.shape()[1..] != expected {
            return Err(Error::Shape { op: "model_forward", lhs: images.shape().to_vec(), rhs: expected.to_vec() });
        }
        let b = images.shape()[0];
        match &self.body {
            Body::Mixer { embed, blocks, head } => {
                let (s, pd) = (cfg.tokens(), cfg.patch_dim());
                let mut tokens = vec![S::zero(); images.len()];
                let per = cfg.input_dim();
                for (src, dst) in images.data().chunks_exact(per).zip(tokens.chunks_exact_mut(per)) {
                    patchify_into(src, cfg.in_channels, cfg.image_size, cfg.image_size, cfg.patch_size, dst)?;
                }
                let x = tape.constant(Tensor::new(&[b, s, pd], tokens)?);
                let mut x = embed.forward(tape, x)?;
                for block in blocks {
                    x = block.forward(tape, x, mode, rng)?;
                }
                let pooled = tape.global_mean_pool(x)?;
                head.forward(tape, pooled)
            }
            Body::Mlp { layers } => {
                let mut x = tape.constant(images.clone().reshape(&[b, cfg.input_dim()])?);
                for (i, layer) in layers.iter().enumerate() {
                    x = layer.forward(tape, x)?;
                    if i + 1 < layers.len() {
                        x = tape.relu(x);
                    }
                }
                Ok(x)
            }
            Body::Kan { layers } => {
                let mut x = tape.constant(images.clone().reshape(&[b, cfg.input_dim()])?);
                for layer in layers {
                    x = layer.forward(tape, x)?;
                }
                Ok(x)
            }
        }
    }

    /// Mixer blocks, empty for the baselines.
    pub fn blocks(&self) -> &[MixerBlock] {
        match &self.body {
            Body::Mixer { blocks, .. } => blocks,
            _ => &[],
        }
    }

    /// Parameter names in enumeration order.
    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|(_, n, _)| String::from(n)).collect()
    }
}
