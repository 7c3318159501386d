//! In-memory image datasets, resizing, augmentation, k-fold splits and batching.
//!
//! Pixels are stored as `f32` in `[-1, 1]` regardless of the model precision;
//! batches are converted when they are gathered.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 10;

/// Maps a pixel byte to `[-1, 1]`.
pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub name: String,
    pub split: Split,
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl ImageSet {
    /// `pixels` holds `labels.len()` images laid out `[c, h, w]`.
    pub fn new(
        name: impl Into<String>,
        split: Split,
        [channels, height, width]: [usize; 3],
        pixels: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let per = channels * height * width;
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::Shape { op: "image set", lhs: vec![pixels.len()], rhs: vec![labels.len(), channels, height, width] });
        }
        if let Some(row) = labels.iter().position(|&l| l >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange { label: labels[row], classes: NUM_CLASSES, row });
        }
        Ok(ImageSet { name: name.into(), split, channels, height, width, pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[c, h, w]` of every image.
    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.channels * self.height * self.width;
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The first `n` images (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> ImageSet {
        let n = n.min(self.len());
        let per = self.channels * self.height * self.width;
        ImageSet { pixels: self.pixels[..n * per].to_vec(), labels: self.labels[..n].to_vec(), ..self.clone_header() }
    }

    fn clone_header(&self) -> ImageSet {
        ImageSet { pixels: Vec::new(), labels: Vec::new(), name: self.name.clone(), ..*self }
    }

    /// Bilinear resize of every image to `size x size`; unchanged if already that size.
    pub fn resize_to(self, size: usize) -> ImageSet {
        if self.height == size && self.width == size {
            return self;
        }
        let mut out = Vec::with_capacity(self.len() * self.channels * size * size);
        for plane in self.pixels.chunks_exact(self.height * self.width) {
            resize_plane(plane, self.height, self.width, size, size, &mut out);
        }
        ImageSet { pixels: out, height: size, width: size, ..self }
    }

    /// Stacks the images at `indices` into `[b, c, h, w]`, optionally augmented.
    pub fn gather<S: Scalar, R: Rng + ?Sized>(
        &self,
        indices: &[usize],
        augment: Option<(&Augmentation, &mut R)>,
    ) -> Result<(Tensor<S>, Vec<usize>)> {
        let per = self.channels * self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        let mut scratch = vec![0.0f32; per];
        let mut augment = augment;
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid("gather", alloc::format!("index {i} out of range for {} images", self.len())));
            }
            let img = self.image(i);
            match augment.as_mut() {
                Some((cfg, rng)) if cfg.enabled => {
                    scratch.copy_from_slice(img);
                    cfg.apply(&mut scratch, self.channels, self.height, self.width, *rng);
                    data.extend(scratch.iter().map(|&v| S::of(v as f64)));
                }
                _ => data.extend(img.iter().map(|&v| S::of(v as f64))),
            }
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(&[indices.len(), self.channels, self.height, self.width], data)?;
        Ok((t, labels))
    }
}

/// Half-pixel-centred bilinear resampling of one plane, appended to `out`.
fn resize_plane(src: &[f32], h: usize, w: usize, oh: usize, ow: usize, out: &mut Vec<f32>) {
    let axis = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, (s - lo as f64) as f32)
    };
    for y in 0..oh {
        let (y0, y1, fy) = axis(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = axis(x, w, ow);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push((top * (1.0 - fy) + bottom * fy).clamp(-1.0, 1.0));
        }
    }
}

/// Random horizontal flip followed by a random rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub enabled: bool,
    pub hflip_prob: f64,
    pub rotation_degrees: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation { enabled: true, hflip_prob: 0.5, rotation_degrees: 10.0 }
    }
}

impl Augmentation {
    pub fn off() -> Self {
        Augmentation { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::invalid("augmentation", "hflip_prob must be in [0, 1]"));
        }
        if !(self.rotation_degrees >= 0.0) {
            return Err(Error::invalid("augmentation", "rotation_degrees must be non-negative"));
        }
        Ok(())
    }

    /// Augments one `[c, h, w]` image in place.
    pub fn apply<R: Rng + ?Sized>(&self, image: &mut [f32], c: usize, h: usize, w: usize, rng: &mut R) {
        if rng.random::<f64>() < self.hflip_prob {
            hflip(image, c, h, w);
        }
        if self.rotation_degrees > 0.0 {
            let deg = (rng.random::<f64>() * 2.0 - 1.0) * self.rotation_degrees;
            rotate(image, c, h, w, deg);
        }
    }
}

pub fn hflip(image: &mut [f32], c: usize, h: usize, w: usize) {
    for row in image[..c * h * w].chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Rotates each plane counter-clockwise by `degrees` about the image centre.
/// Samples falling outside the frame read as -1.
pub fn rotate(image: &mut [f32], c: usize, h: usize, w: usize, degrees: f64) {
    if degrees == 0.0 {
        return;
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut src = vec![0.0f32; h * w];
    for plane in image[..c * h * w].chunks_exact_mut(h * w) {
        src.copy_from_slice(plane);
        let at = |y: isize, x: isize| -> f32 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                -1.0
            } else {
                src[y as usize * w + x as usize]
            }
        };
        for y in 0..h {
            for x in 0..w {
                // inverse map: rotate the destination point by -theta
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let sx = cos * dx - sin * dy + cx;
                let sy = sin * dx + cos * dy + cy;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                plane[y * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
}

/// One train/validation partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Partitions a seeded permutation of `0..n` into `k` validation folds whose
/// sizes differ by at most one, larger folds first.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid("kfold", "k must be at least 2"));
    }
    if k > n {
        return Err(Error::invalid("kfold", alloc::format!("k = {k} exceeds N = {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let val = perm[start..start + len].to_vec();
        let train = perm[..start].iter().chain(&perm[start + len..]).copied().collect();
        folds.push(Fold { index: i, train, val });
        start += len;
    }
    Ok(folds)
}

/// Batches of `indices` for one epoch; the final partial batch is kept.
pub fn batches<R: Rng + ?Sized>(indices: &[usize], batch_size: usize, shuffle: bool, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    if shuffle {
        order.shuffle(rng);
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
