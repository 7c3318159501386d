#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flate2::write::GzEncoder;
use flate2::Compression;

pub fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut v = magic.to_be_bytes().to_vec();
    for d in dims {
        v.extend(d.to_be_bytes());
    }
    v.extend(payload);
    v
}

pub fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

/// A 28x28 image whose bright horizontal band position encodes the class.
pub fn class_image(class: usize, variant: usize) -> Vec<u8> {
    let mut img = vec![0u8; 28 * 28];
    let row0 = 1 + class * 2 + variant % 2;
    for r in row0..row0 + 3 {
        for c in 2..26 {
            img[r * 28 + c] = 200 + (variant % 50) as u8;
        }
    }
    img
}

/// Writes a Fashion-MNIST shaped dataset (gzip IDX) under `root/fashion-mnist`.
pub fn write_fashion(root: &Path, n_train: usize, n_test: usize) {
    let dir = root.join("fashion-mnist");
    fs::create_dir_all(&dir).unwrap();
    for (stem, n) in [("train", n_train), ("t10k", n_test)] {
        let labels: Vec<u8> = (0..n).map(|i| ((i * 7 + 3) % 10) as u8).collect();
        let pixels: Vec<u8> = labels.iter().enumerate().flat_map(|(i, &l)| class_image(l as usize, i)).collect();
        let images = idx_bytes(0x803, &[n as u32, 28, 28], &pixels);
        let labels = idx_bytes(0x801, &[n as u32], &labels);
        fs::write(dir.join(format!("{stem}-images-idx3-ubyte.gz")), gzip(&images)).unwrap();
        fs::write(dir.join(format!("{stem}-labels-idx1-ubyte.gz")), gzip(&labels)).unwrap();
    }
}

/// CIFAR-10 binary batches in the canonical layout: five training batches and
/// one test batch, labels cycling through the classes.
pub fn write_cifar(root: &Path, per_batch: usize, test: usize) {
    let dir = root.join("cifar-10-batches-bin");
    fs::create_dir_all(&dir).unwrap();
    let batch = |n: usize, offset: usize| -> Vec<u8> {
        let mut out = Vec::with_capacity(n * 3073);
        for i in 0..n {
            let label = (i + offset) % 10;
            out.push(label as u8);
            out.extend((0..3072).map(|p| ((p * 31 + i * 17 + label * 53) % 256) as u8));
        }
        out
    };
    for b in 1..=5 {
        fs::write(dir.join(format!("data_batch_{b}.bin")), batch(per_batch, b)).unwrap();
    }
    fs::write(dir.join("test_batch.bin"), batch(test, 0)).unwrap();
}

pub fn kanmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kanmix")).args(args).env_remove("KANMIX_DATA_DIR").output().unwrap()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Flags for a model small enough to train in a fraction of a second.
pub const TINY: &[&str] =
    &["--dim", "8", "--depth", "1", "--patch-size", "16", "--batch-size", "16", "--precision", "f32"];

/// Runs `kanmix train` with the tiny model and returns its model directory.
pub fn train_tiny(data: &Path, out: &Path, model: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--data-dir", path_str(data), "--out-dir", path_str(out), "--model", model];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    let res = kanmix(&args);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    out.join("fashion-mnist").join(model)
}
