//! IDX binary format (the MNIST/FMNIST distribution files).
//!
//! Images: big-endian magic 0x00000803, count, rows, cols, then one byte per
//! pixel. Labels: magic 0x00000801, count, then one byte per label.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::format_at(
            bytes.len(),
            format!("truncated {what}: need {end} bytes, have {}", bytes.len()),
        ));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parsed image tensor: (count, rows, cols, pixel bytes).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format_at(
            0,
            format!("bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let count = read_u32_be(bytes, 4, "image header")? as usize;
    let rows = read_u32_be(bytes, 8, "image header")? as usize;
    let cols = read_u32_be(bytes, 12, "image header")? as usize;
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format_at(4, "image dimensions overflow".to_string()))?;
    let body = &bytes[16..];
    if body.len() != expected {
        return Err(Error::format_at(
            16 + body.len().min(expected),
            format!("expected {expected} pixel bytes, found {}", body.len()),
        ));
    }
    Ok((count, rows, cols, body))
}

/// Parsed label list: (count, label bytes).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<(usize, &[u8])> {
    let magic = read_u32_be(bytes, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format_at(
            0,
            format!("bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let count = read_u32_be(bytes, 4, "label header")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format_at(
            8 + body.len().min(count),
            format!("expected {count} label bytes, found {}", body.len()),
        ));
    }
    Ok((count, body))
}

/// Loads an image/label IDX pair into a dataset. Pixels are scaled to
/// [0, 1]; each image is flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let image_bytes =
        std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes =
        std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (count, rows, cols, pixels) =
        parse_idx_images(&image_bytes).map_err(|e| e.with_path(images_path))?;
    let (label_count, labels) =
        parse_idx_labels(&label_bytes).map_err(|e| e.with_path(labels_path))?;
    if label_count != count {
        return Err(Error::format_at(
            4,
            format!("label count {label_count} does not match image count {count}"),
        )
        .with_path(labels_path));
    }
    let features: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(
        features,
        labels,
        rows * cols,
        n_classes,
        format!("idx({})", images_path.display()),
    )
}
