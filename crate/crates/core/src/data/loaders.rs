use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), "truncated header"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image file into `N x 1 x rows x cols` scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(path, 0, format!("expected image magic 2051, found {magic}")));
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() != need {
        return Err(format_err(
            path,
            bytes.len().min(need),
            format!("expected {need} bytes for {n} images of {rows}x{cols}, found {}", bytes.len()),
        ));
    }
    let data = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(path, 0, format!("expected label magic 2049, found {magic}")));
    }
    let n = read_u32(bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(format_err(
            path,
            bytes.len().min(8 + n),
            format!("expected {} bytes for {n} labels, found {}", 8 + n, bytes.len()),
        ));
    }
    if let Some(pos) = bytes[8..].iter().position(|&b| b >= 10) {
        return Err(format_err(path, 8 + pos, format!("label {} is not a digit", bytes[8 + pos])));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Loads an MNIST image/label file pair.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let x = parse_idx_images(&read_file(images)?, images)?;
    let y = parse_idx_labels(&read_file(labels)?, labels)?;
    if x.shape()[0] != y.len() {
        return Err(format_err(
            labels,
            4,
            format!("{} labels for {} images", y.len(), x.shape()[0]),
        ));
    }
    Dataset::new(x, y, 10)
}

/// Parses concatenated 3073-byte CIFAR-10 records.
pub fn parse_cifar10_bin(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(format_err(
            path,
            whole,
            format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(format_err(path, i * CIFAR_RECORD, format!("label byte {} >= 10", rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((pixels, labels))
}

/// Loads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let path: PathBuf = p.as_ref().to_path_buf();
        let (x, y) = parse_cifar10_bin(&read_file(&path)?, &path)?;
        pixels.extend(x);
        labels.extend(y);
    }
    Dataset::new(Tensor::new(vec![labels.len(), 3, 32, 32], pixels)?, labels, 10)
}
