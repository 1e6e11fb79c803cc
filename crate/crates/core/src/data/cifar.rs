//! CIFAR-10 binary batches: records of one label byte followed by
//! 3 x 32 x 32 channel-major pixel bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::from_8bit;
use crate::tensor::Tensor;

pub const RECORD_LEN: usize = 1 + 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn files(self) -> Vec<String> {
        match self {
            Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            Split::Test => vec!["test_batch.bin".to_string()],
        }
    }
}

/// Parses records from raw bytes into images in `[-1, 1]` and labels.
pub fn parse_records(bytes: &[u8], limit: Option<usize>) -> Result<(Vec<f64>, Vec<usize>)> {
    if bytes.len() % RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {RECORD_LEN}-byte records",
            bytes.len()
        )));
    }
    let n = (bytes.len() / RECORD_LEN).min(limit.unwrap_or(usize::MAX));
    let mut images = Vec::with_capacity(n * (RECORD_LEN - 1));
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(RECORD_LEN).take(n) {
        if rec[0] > 9 {
            return Err(Error::Format(format!("label {} out of range", rec[0])));
        }
        labels.push(rec[0] as usize);
        images.extend(rec[1..].iter().map(|&b| from_8bit(b)));
    }
    Ok((images, labels))
}

/// Loads up to `limit` records of a split, in file order.
pub fn load_cifar10_bin(
    dir: impl AsRef<Path>,
    split: Split,
    limit: Option<usize>,
) -> Result<(Tensor<f64>, Vec<usize>)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in split.files() {
        let remaining = limit.map(|l| l - labels.len());
        if remaining == Some(0) {
            break;
        }
        let path = dir.as_ref().join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (im, lb) = parse_records(&bytes, remaining)?;
        images.extend(im);
        labels.extend(lb);
    }
    if labels.is_empty() {
        return Err(Error::Format("no CIFAR-10 records found".into()));
    }
    Ok((Tensor::new(vec![labels.len(), 3, 32, 32], images)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_parsing() {
        let mut bytes = vec![0u8; 3 * RECORD_LEN];
        bytes[0] = 7;
        bytes[1] = 255;
        bytes[RECORD_LEN] = 2;
        let (im, lb) = parse_records(&bytes, Some(2)).unwrap();
        assert_eq!(lb, vec![7, 2]);
        assert_eq!(im.len(), 2 * 3072);
        assert_eq!(im[0], 1.0);
        assert_eq!(im[1], -1.0);
        assert!(parse_records(&bytes[1..], None).is_err());
        bytes[0] = 10;
        assert!(parse_records(&bytes, None).is_err());
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_cifar10_bin(dir.path(), Split::Test, None),
            Err(Error::Io { .. })
        ));
        let mut bytes = vec![0u8; 150 * RECORD_LEN];
        bytes[0] = 3;
        fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();
        let (x, y) = load_cifar10_bin(dir.path(), Split::Test, Some(100)).unwrap();
        assert_eq!(x.shape(), &[100, 3, 32, 32]);
        assert_eq!(y.len(), 100);
        assert!(y[0] <= 9);
    }
}
