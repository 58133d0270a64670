//! CIFAR-10 binary format: 3073-byte records, one label byte followed by
//! 3072 pixel bytes in channel-planar (R, G, B) order.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const CIFAR10_RECORD_LEN: usize = 3073;
const CIFAR10_CLASSES: usize = 10;

/// Decodes records from one file's bytes, appending scaled pixels and labels.
pub fn parse_cifar10_records(
    bytes: &[u8],
    features: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    if bytes.len() % CIFAR10_RECORD_LEN != 0 {
        return Err(Error::format_at(
            bytes.len() / CIFAR10_RECORD_LEN * CIFAR10_RECORD_LEN,
            format!(
                "file length {} is not a multiple of the {CIFAR10_RECORD_LEN}-byte record size",
                bytes.len()
            ),
        ));
    }
    for (i, record) in bytes.chunks_exact(CIFAR10_RECORD_LEN).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR10_CLASSES {
            return Err(Error::format_at(
                i * CIFAR10_RECORD_LEN,
                format!("label byte {label} out of range 0..{CIFAR10_CLASSES}"),
            ));
        }
        labels.push(label);
        features.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok(())
}

/// Loads and concatenates CIFAR-10 binary files in the given order.
pub fn load_cifar10_bin(paths: &[impl AsRef<Path>]) -> Result<LabeledDataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_cifar10_records(&bytes, &mut features, &mut labels)
            .map_err(|e| e.with_path(path))?;
        provenance.push(path.display().to_string());
    }
    LabeledDataset::new(
        features,
        labels,
        CIFAR10_RECORD_LEN - 1,
        CIFAR10_CLASSES,
        format!("cifar10({})", provenance.join(",")),
    )
}
