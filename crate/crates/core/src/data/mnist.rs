//! MNIST in the IDX format, binarized by a fixed intensity threshold.

use std::path::Path;

use crate::data::dataset::{DiscreteDataset, Split};
use crate::error::{PtnError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const DEFAULT_THRESHOLD: u16 = 128;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| PtnError::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| PtnError::Data(format!("{}: truncated IDX header", path.display())))
}

/// Raw images: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(PtnError::Data(format!(
            "{}: bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}",
            path.display()
        )));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(PtnError::Data(format!(
            "{}: truncated image data ({} of {need} bytes)",
            path.display(),
            body.len()
        )));
    }
    Ok((count, rows, cols, body[..need].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(PtnError::Data(format!(
            "{}: bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}",
            path.display()
        )));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(PtnError::Data(format!(
            "{}: truncated label data ({} of {count} bytes)",
            path.display(),
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&read(path)?, path)
}

/// Flattened binary images: pixel `≥ threshold` maps to 1. A threshold above
/// 255 yields all zeros. When a label file is given it is validated against
/// the image count.
pub fn load_mnist_binarized(
    images: impl AsRef<Path>,
    labels: Option<&Path>,
    threshold: u16,
) -> Result<DiscreteDataset> {
    let path = images.as_ref();
    let (count, rows, cols, pixels) = parse_idx_images(&read(path)?, path)?;
    if let Some(lp) = labels {
        let l = load_idx_labels(lp)?;
        if l.len() != count {
            return Err(PtnError::Data(format!(
                "{} labels for {count} images",
                l.len()
            )));
        }
    }
    binarize(count, rows * cols, &pixels, threshold)
}

pub fn binarize(
    count: usize,
    width: usize,
    pixels: &[u8],
    threshold: u16,
) -> Result<DiscreteDataset> {
    let data = (0..count)
        .map(|i| {
            pixels[i * width..(i + 1) * width]
                .iter()
                .map(|&p| usize::from(u16::from(p) >= threshold))
                .collect()
        })
        .collect();
    DiscreteDataset::new(data, vec![2; width], Split::Train)
}

/// Serializes images in IDX form (used to build fixtures and subsets).
pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
