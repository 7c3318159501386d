//! Decoders for the IDX (MNIST family) and CIFAR-10 binary formats.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use kanmix_core::data::{byte_to_unit, ImageSet, Split};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Reads a file, transparently inflating it when it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn idx_header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let header = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(Error::format(path, format!("truncated: {} bytes, no magic number", bytes.len())));
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::format(path, format!("bad magic 0x{found:08x}, expected 0x{magic:08x}")));
    }
    if bytes.len() < header {
        return Err(Error::format(path, format!("truncated header: {} of {header} bytes", bytes.len())));
    }
    let shape: Vec<usize> = (0..dims).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let need = header + shape.iter().product::<usize>();
    if bytes.len() < need {
        return Err(Error::format(path, format!("truncated: header declares {need} bytes, file has {}", bytes.len())));
    }
    Ok(shape)
}

/// `(n, h, w, pixels)` from an IDX image file.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let s = idx_header(bytes, path, IDX_IMAGES_MAGIC, 3)?;
    let (n, h, w) = (s[0], s[1], s[2]);
    Ok((n, h, w, bytes[16..16 + n * h * w].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let s = idx_header(bytes, path, IDX_LABELS_MAGIC, 1)?;
    Ok(bytes[8..8 + s[0]].to_vec())
}

fn checked_labels(raw: &[u8], path: &Path) -> Result<Vec<usize>> {
    match raw.iter().position(|&l| l >= 10) {
        Some(i) => Err(Error::format(path, format!("label {} at index {i} is not a class in 0..10", raw[i]))),
        None => Ok(raw.iter().map(|&l| l as usize).collect()),
    }
}

/// Grayscale images and labels from a pair of IDX files, pixels scaled to `[-1, 1]`.
pub fn load_idx(images: &Path, labels: &Path, name: &str, split: Split) -> Result<ImageSet> {
    let (n, h, w, px) = parse_idx_images(&read_maybe_gz(images)?, images)?;
    let raw_labels = parse_idx_labels(&read_maybe_gz(labels)?, labels)?;
    if raw_labels.len() != n {
        return Err(Error::format(
            labels,
            format!("{} labels for {n} images in {}", raw_labels.len(), images.display()),
        ));
    }
    let labels = checked_labels(&raw_labels, labels)?;
    Ok(ImageSet::new(name, split, [1, h, w], px.into_iter().map(byte_to_unit).collect(), labels)?)
}

/// Concatenates CIFAR-10 binary batches: each record is a label byte then
/// 1024 red, 1024 green and 1024 blue bytes, row-major.
pub fn load_cifar10(paths: &[PathBuf], split: Split) -> Result<ImageSet> {
    let mut px = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % CIFAR_RECORD != 0 {
            let offset = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
            return Err(Error::format(
                path,
                format!(
                    "truncated record at byte offset {offset}: {} trailing bytes, records are {CIFAR_RECORD} bytes",
                    bytes.len() - offset
                ),
            ));
        }
        for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if rec[0] >= 10 {
                return Err(Error::format(path, format!("label {} at byte offset {}", rec[0], i * CIFAR_RECORD)));
            }
            labels.push(rec[0] as usize);
            px.extend(rec[1..].iter().map(|&b| byte_to_unit(b)));
        }
    }
    Ok(ImageSet::new("cifar10", split, [3, 32, 32], px, labels)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    FashionMnist,
    Cifar10,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::FashionMnist => "fashion-mnist",
            Dataset::Cifar10 => "cifar10",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Dataset::FashionMnist => 1,
            Dataset::Cifar10 => 3,
        }
    }

    /// Files backing `split` under `data_dir`, first existing candidate layout wins.
    pub fn files(self, data_dir: &Path, split: Split) -> Vec<PathBuf> {
        match self {
            Dataset::FashionMnist => {
                let dir = data_dir.join("fashion-mnist");
                let stem = if split == Split::Train { "train" } else { "t10k" };
                ["images-idx3-ubyte", "labels-idx1-ubyte"]
                    .iter()
                    .map(|kind| {
                        let plain = dir.join(format!("{stem}-{kind}"));
                        let gz = dir.join(format!("{stem}-{kind}.gz"));
                        if gz.exists() || !plain.exists() {
                            gz
                        } else {
                            plain
                        }
                    })
                    .collect()
            }
            Dataset::Cifar10 => {
                let dir = data_dir.join("cifar-10-batches-bin");
                match split {
                    Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
                    Split::Test => vec![dir.join("test_batch.bin")],
                }
            }
        }
    }

    /// Loads a split and resizes it to `size x size`.
    pub fn load(self, data_dir: &Path, split: Split, size: usize) -> Result<ImageSet> {
        let files = self.files(data_dir, split);
        if let Some(missing) = files.iter().find(|p| !p.exists()) {
            return Err(Error::Missing(missing.clone()));
        }
        let set = match self {
            Dataset::FashionMnist => load_idx(&files[0], &files[1], self.as_str(), split)?,
            Dataset::Cifar10 => load_cifar10(&files, split)?,
        };
        Ok(set.resize_to(size))
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fashion-mnist" => Ok(Dataset::FashionMnist),
            "cifar10" | "cifar-10" => Ok(Dataset::Cifar10),
            _ => Err(format!("unknown dataset {s:?} (expected fashion-mnist or cifar10)")),
        }
    }
}

impl std::fmt::Display for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
