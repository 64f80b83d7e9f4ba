//! IDX binary tensors: big-endian magic `[0, 0, dtype, ndim]`, then `ndim`
//! big-endian u32 dimension sizes, then the raw data. Only the unsigned-byte
//! dtype (0x08) is supported; parse errors carry the byte offset at which
//! the file stopped making sense.

use std::path::Path;

use crate::error::{Error, Result};
use crate::streams::dataset::Dataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const UBYTE: u8 = 0x08;

/// A raw ubyte tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 255 {
            return Err(Error::Data(format!(
                "tensor rank must be in 1..=255, got {}",
                dims.len()
            )));
        }
        let expect: usize = dims.iter().try_fold(1usize, |acc, &d| {
            if d > u32::MAX as usize {
                return None;
            }
            acc.checked_mul(d)
        })
        .ok_or_else(|| Error::Data("dimension product overflows".into()))?;
        if expect != data.len() {
            return Err(Error::Data(format!(
                "dims {:?} imply {expect} bytes, got {}",
                dims,
                data.len()
            )));
        }
        Ok(IdxTensor { dims, data })
    }

    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn parse(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        let reason = if bytes.is_empty() {
            "empty file".to_string()
        } else {
            format!("magic truncated to {} bytes", bytes.len())
        };
        return Err(parse_err(bytes.len(), reason));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(0, "magic does not start with two zero bytes"));
    }
    if bytes[2] != UBYTE {
        return Err(parse_err(
            2,
            format!("unsupported dtype 0x{:02x}, only ubyte (0x08)", bytes[2]),
        ));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(parse_err(3, "zero-dimensional tensor"));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut off = 4;
    for i in 0..ndim {
        let Some(raw) = bytes.get(off..off + 4) else {
            return Err(parse_err(
                bytes.len(),
                format!("file ends inside dimension {i} of {ndim}"),
            ));
        };
        dims.push(u32::from_be_bytes(raw.try_into().unwrap()) as usize);
        off += 4;
    }
    let expect: usize = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| parse_err(4, format!("dimension product overflows: {dims:?}")))?;
    let Some(data) = bytes.get(off..off + expect) else {
        return Err(parse_err(
            bytes.len(),
            format!(
                "file ends at byte {} but dims {:?} need {} data bytes from byte {off}",
                bytes.len(),
                dims,
                expect
            ),
        ));
    };
    if bytes.len() > off + expect {
        return Err(parse_err(
            off + expect,
            format!("{} trailing bytes after the tensor", bytes.len() - off - expect),
        ));
    }
    Ok(IdxTensor {
        dims,
        data: data.to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path)?;
    parse(&bytes).map_err(|e| match e {
        Error::Parse { offset, reason } => Error::Parse {
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

pub fn write_idx(path: &Path, tensor: &IdxTensor) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + tensor.data.len());
    out.extend_from_slice(&[0, 0, UBYTE, tensor.dims.len() as u8]);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a 3-dimensional image tensor and flattens each image to one feature
/// row with values scaled to `[0, 1]` by `v / 255`.
pub fn read_images(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let tensor = read_idx(path)?;
    if tensor.dims.len() != 3 {
        return Err(parse_err(
            0,
            format!(
                "{}: expected magic 0x{IMAGE_MAGIC:08x} (3-dimensional image tensor), found 0x{:08x}",
                path.display(),
                tensor.magic()
            ),
        ));
    }
    let rows = tensor.dims[0];
    let width = tensor.dims[1] * tensor.dims[2];
    let features = tensor.data.iter().map(|&v| v as f64 / 255.0).collect();
    Ok((features, width, rows))
}

/// Reads a 1-dimensional label vector as raw class indices.
pub fn read_labels(path: &Path) -> Result<Vec<f64>> {
    let tensor = read_idx(path)?;
    if tensor.dims.len() != 1 {
        return Err(parse_err(
            0,
            format!(
                "{}: expected magic 0x{LABEL_MAGIC:08x} (1-dimensional label vector), found 0x{:08x}",
                path.display(),
                tensor.magic()
            ),
        ));
    }
    Ok(tensor.data.iter().map(|&v| v as f64).collect())
}

/// Reads an image/label file pair into a dataset.
pub fn read_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let (features, width, rows) = read_images(images)?;
    let y = read_labels(labels)?;
    if y.len() != rows {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            rows,
            y.len()
        )));
    }
    Dataset::new(features, width, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn crafted_image_file_parses_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        // magic 0x00000803, dims (1, 2, 2), bytes (0, 128, 255, 64)
        let path = write_raw(
            &dir,
            "img.idx",
            &[
                0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 128, 255, 64,
            ],
        );
        let (features, width, rows) = read_images(&path).unwrap();
        assert_eq!((width, rows), (4, 1));
        assert_eq!(
            features,
            vec![0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]
        );
        assert!((features[1] - 0.5019607843137255).abs() < 1e-16);
        assert!((features[3] - 0.25098039215686274).abs() < 1e-16);
    }

    #[test]
    fn label_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_raw(&dir, "lbl.idx", &[0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9]);
        assert_eq!(read_labels(&path).unwrap(), vec![7.0, 0.0, 9.0]);
    }

    #[test]
    fn wrong_magic_for_image_reader_names_the_expected_magic() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write_raw(&dir, "lbl.idx", &[0, 0, 8, 1, 0, 0, 0, 1, 5]);
        let err = read_images(&labels).unwrap_err().to_string();
        assert!(err.contains("0x00000803"), "{err}");
        assert!(err.contains("0x00000801"), "{err}");
    }

    #[test]
    fn empty_file_errors_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_raw(&dir, "empty.idx", &[]);
        match read_idx(&path).unwrap_err() {
            Error::Parse { offset, reason } => {
                assert_eq!(offset, 0);
                assert!(reason.contains("empty"), "{reason}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn truncation_errors_carry_offsets() {
        let dir = tempfile::tempdir().unwrap();
        // dims claim 4 data bytes, only 2 present
        let path = write_raw(&dir, "trunc.idx", &[0, 0, 8, 1, 0, 0, 0, 4, 1, 2]);
        match read_idx(&path).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 10),
            other => panic!("expected parse error, got {other}"),
        }
        // file ends inside the dimension table
        let path = write_raw(&dir, "dims.idx", &[0, 0, 8, 2, 0, 0, 0, 1]);
        match read_idx(&path).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 8),
            other => panic!("expected parse error, got {other}"),
        }
        // unsupported dtype
        let path = write_raw(&dir, "dtype.idx", &[0, 0, 9, 1, 0, 0, 0, 0]);
        match read_idx(&path).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn dataset_pairing_checks_counts() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_raw(
            &dir,
            "i.idx",
            &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2, 10, 20, 30, 40],
        );
        let lbl = write_raw(&dir, "l.idx", &[0, 0, 8, 1, 0, 0, 0, 2, 0, 1]);
        let ds = read_dataset(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.width(), 2);
        assert_eq!(ds.labels(), &[0.0, 1.0]);
        let short = write_raw(&dir, "s.idx", &[0, 0, 8, 1, 0, 0, 0, 1, 0]);
        assert!(read_dataset(&img, &short).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_is_exact(
                dims in proptest::collection::vec(1usize..6, 1..4),
                seed in any::<u64>(),
            ) {
                let total: usize = dims.iter().product();
                let data: Vec<u8> = (0..total)
                    .map(|i| (seed.wrapping_mul(i as u64 + 1) >> 32) as u8)
                    .collect();
                let tensor = IdxTensor::new(dims, data).unwrap();
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("t.idx");
                write_idx(&path, &tensor).unwrap();
                prop_assert_eq!(read_idx(&path).unwrap(), tensor);
            }
        }
    }
}
