use std::fs;
use std::path::Path;

use super::dataset::{Dataset, Normalization, Split};
use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
/// One label byte followed by three 32x32 colour planes.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

/// Decodes records into raw `[0, 1]` pixels and labels.
pub fn parse_records(bytes: &[u8]) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.is_empty() {
        return Err(Error::Format("file contains no records".into()));
    }
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "truncated record: {} bytes is not a multiple of the {CIFAR_RECORD_BYTES}-byte record size",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!(
                "record {i} has label byte {label}, expected 0..=9"
            )));
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((pixels, labels))
}

/// Encodes `[N, 3, 32, 32]` raw pixels in `[0, 1]` (clamped, rounded to bytes).
pub fn encode_records(raw: &[f32], labels: &[usize]) -> Result<Vec<u8>> {
    let plane = CIFAR_RECORD_BYTES - 1;
    if raw.len() != labels.len() * plane {
        return Err(Error::invalid(
            "raw",
            format!("{} pixels for {} records of {plane}", raw.len(), labels.len()),
        ));
    }
    let mut out = Vec::with_capacity(labels.len() * CIFAR_RECORD_BYTES);
    for (i, &label) in labels.iter().enumerate() {
        if label >= CIFAR_CLASSES || label > u8::MAX as usize {
            return Err(Error::LabelOutOfRange {
                label,
                classes: CIFAR_CLASSES,
            });
        }
        out.push(label as u8);
        out.extend(
            raw[i * plane..(i + 1) * plane]
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

pub fn write_records(path: &Path, raw: &[f32], labels: &[usize]) -> Result<()> {
    let bytes = encode_records(raw, labels)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_records(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads a single record file as a dataset.
pub fn load_cifar10_file(
    path: &Path,
    split: Split,
    normalization: Option<Normalization>,
) -> Result<Dataset> {
    let (raw, labels) = read(path)?;
    let shape = [labels.len(), 3, CIFAR_SIDE, CIFAR_SIDE];
    Dataset::from_raw(raw, shape, labels, CIFAR_CLASSES, split, normalization)
}

/// Loads the five training batches and the test batch from `dir`.
/// Normalization constants come from the training split.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    for name in TRAIN_FILES {
        let (r, l) = read(&dir.join(name))?;
        raw.extend(r);
        labels.extend(l);
    }
    let shape = [labels.len(), 3, CIFAR_SIDE, CIFAR_SIDE];
    let train = Dataset::from_raw(raw, shape, labels, CIFAR_CLASSES, Split::Train, None)?;
    let test = load_cifar10_file(
        &dir.join(TEST_FILE),
        Split::Test,
        Some(train.normalization().clone()),
    )?;
    Ok((train, test))
}
