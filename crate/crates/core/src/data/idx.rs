//! IDX container parsing (the MNIST distribution format).
//!
//! Layout: a 4-byte big-endian magic number (`0x00000803` = 2051 for
//! unsigned-byte rank-3 image files, `0x00000801` = 2049 for rank-1 label
//! files), one big-endian `u32` per dimension, then the unsigned-byte
//! payload in row-major order.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::dataset::{Dataset, RawSplit};
use crate::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// Decoded image file: `count` images of `rows × cols` bytes each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn truncated(file: &str, what: &str) -> Error {
    Error::io(
        format!("{file}: truncated while reading {what}"),
        io::Error::from(io::ErrorKind::UnexpectedEof),
    )
}

fn read_u32(bytes: &[u8], at: usize, file: &str, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(file, what))
}

fn check_magic(bytes: &[u8], expected: u32, file: &str) -> Result<()> {
    let magic = read_u32(bytes, 0, file, "magic number")?;
    if magic != expected {
        return Err(Error::Format {
            file: file.to_owned(),
            message: format!("magic number {magic} (expected {expected})"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, file: &str) -> Result<&'a [u8]> {
    let body = &bytes[header..];
    if body.len() < len {
        return Err(truncated(file, "payload"));
    }
    if body.len() > len {
        return Err(Error::Format {
            file: file.to_owned(),
            message: format!("{} trailing bytes after payload", body.len() - len),
        });
    }
    Ok(body)
}

/// Parses an IDX image file held in memory. `file` names it in errors.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, file)?;
    let count = read_u32(bytes, 4, file, "image count")? as usize;
    let rows = read_u32(bytes, 8, file, "row count")? as usize;
    let cols = read_u32(bytes, 12, file, "column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| Error::Format {
            file: file.to_owned(),
            message: format!("dimensions {count}x{rows}x{cols} overflow"),
        })?;
    let pixels = payload(bytes, 16, len, file)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

/// Parses an IDX label file held in memory.
pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, file)?;
    let count = read_u32(bytes, 4, file, "label count")? as usize;
    Ok(payload(bytes, 8, count, file)?.to_vec())
}

/// Locations of the four MNIST files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    /// The conventional file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }
}

/// Raw MNIST train and test splits, pixels scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct MnistData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Labels in IDX label files must be digits.
const MNIST_CLASSES: usize = 10;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Builds one split from image and label bytes.
pub fn split_from_idx(images: &[u8], images_name: &str, labels: &[u8], labels_name: &str) -> Result<Dataset> {
    let img = parse_idx_images(images, images_name)?;
    let lab = parse_idx_labels(labels, labels_name)?;
    if img.count != lab.len() {
        return Err(Error::Consistency(format!(
            "{images_name} holds {} images but {labels_name} holds {} labels",
            img.count,
            lab.len()
        )));
    }
    if let Some(&bad) = lab.iter().find(|&&l| usize::from(l) >= MNIST_CLASSES) {
        return Err(Error::Data(format!("{labels_name}: label {bad} is not a digit")));
    }
    let raw = RawSplit::new(img.pixels, lab, img.rows * img.cols, MNIST_CLASSES)?;
    Ok(Dataset::from_raw(Arc::new(raw)))
}

/// Loads the four standard IDX files from `dir`.
pub fn load_mnist_idx(dir: impl AsRef<Path>) -> Result<MnistData> {
    load_mnist_files(&MnistFiles::in_dir(dir))
}

pub fn load_mnist_files(files: &MnistFiles) -> Result<MnistData> {
    let load = |images: &Path, labels: &Path| -> Result<Dataset> {
        split_from_idx(
            &read_file(images)?,
            &images.display().to_string(),
            &read_file(labels)?,
            &labels.display().to_string(),
        )
    };
    Ok(MnistData {
        train: load(&files.train_images, &files.train_labels)?,
        test: load(&files.test_images, &files.test_labels)?,
    })
}

/// Serializes images in IDX form; used for fixtures and tooling.
pub fn encode_idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
