//! IDX reader/writer (the MNIST container format).
//!
//! Layout: a big-endian `u32` magic (`0x0000_0801` for 1-d label files,
//! `0x0000_0803` for 3-d image files), one big-endian `u32` per dimension,
//! then the unsigned-byte payload in row-major order.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

/// Unsigned-byte tensor read from an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn labels(data: Vec<u8>) -> Self {
        Self {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn images(count: usize, rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != count * rows * cols {
            return Err(Error::Idx(format!(
                "{count}x{rows}x{cols} images need {} bytes, got {}",
                count * rows * cols,
                data.len()
            )));
        }
        Ok(Self {
            dims: vec![count, rows, cols],
            data,
        })
    }

    fn magic(&self) -> Result<u32> {
        match self.dims.len() {
            1 => Ok(LABELS_MAGIC),
            3 => Ok(IMAGES_MAGIC),
            n => Err(Error::Idx(format!("unsupported rank {n}"))),
        }
    }

    /// Payload rescaled to `[0, 1]`.
    pub fn unit_scaled(&self) -> Vec<f64> {
        self.data.iter().map(|&b| f64::from(b) / 255.0).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic()?.to_be_bytes());
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| Error::Idx(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        Ok(out)
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::Idx("truncated header".into()))
    };
    let magic = word(0)?;
    let rank = match magic {
        LABELS_MAGIC => 1,
        IMAGES_MAGIC => 3,
        other => return Err(Error::Idx(format!("bad magic 0x{other:08x}"))),
    };
    let dims = (0..rank)
        .map(|i| word(4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Idx(format!(
            "payload has {} bytes, dimensions {:?} require {expected}",
            payload.len(),
            dims
        )));
    }
    Ok(IdxTensor {
        dims,
        data: payload.to_vec(),
    })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    parse_idx(&fs::read(path)?)
}

pub fn write_idx(path: impl AsRef<Path>, tensor: &IdxTensor) -> Result<()> {
    fs::write(path, tensor.to_bytes()?)?;
    Ok(())
}

/// Pairs an image file with a label file. Pixels are flattened per image
/// and scaled to `[0, 1]`; `class_count` is `max(label) + 1`.
pub fn idx_dataset(images: &IdxTensor, labels: &IdxTensor) -> Result<Dataset> {
    if images.dims.len() != 3 || labels.dims.len() != 1 {
        return Err(Error::Idx("expected a rank-3 image tensor and rank-1 labels".into()));
    }
    let (count, width) = (images.dims[0], images.dims[1] * images.dims[2]);
    if labels.dims[0] != count {
        return Err(Error::Idx(format!("{count} images but {} labels", labels.dims[0])));
    }
    let ys: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let class_count = ys.iter().max().map_or(1, |m| m + 1);
    Dataset::new(Matrix::new(count, width, images.unit_scaled())?, ys, class_count, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_label_file() {
        let t = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 2, 7, 2]).unwrap();
        assert_eq!(t.dims, vec![2]);
        assert_eq!(t.data, vec![7, 2]);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = parse_idx(&[0, 0, 8, 5, 0, 0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[1; 7]);
        let err = parse_idx(&bytes).unwrap_err();
        assert!(err.to_string().contains("require 8"), "{err}");
        assert!(parse_idx(&[0, 0, 8, 3, 0, 0]).is_err());
    }

    #[test]
    fn pixels_scale_to_unit_interval() {
        let t = IdxTensor::images(1, 1, 3, vec![0, 51, 255]).unwrap();
        assert_eq!(t.unit_scaled(), vec![0.0, 0.2, 1.0]);
    }

    #[test]
    fn builds_dataset_and_round_trips_through_disk() {
        let dir = std::env::temp_dir().join(format!("sparsam-idx-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let img = IdxTensor::images(2, 2, 2, vec![0, 255, 10, 20, 30, 40, 50, 60]).unwrap();
        let lab = IdxTensor::labels(vec![3, 1]);
        write_idx(dir.join("img"), &img).unwrap();
        write_idx(dir.join("lab"), &lab).unwrap();
        let ds = idx_dataset(&read_idx(dir.join("img")).unwrap(), &read_idx(dir.join("lab")).unwrap()).unwrap();
        assert_eq!(ds.class_count, 4);
        assert_eq!(ds.features.row(0), &[0.0, 1.0, 10.0 / 255.0, 20.0 / 255.0]);
        fs::remove_dir_all(dir).unwrap();
    }

    proptest! {
        #[test]
        fn write_then_read_is_exact(count in 0usize..4, rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let data: Vec<u8> = (0..count * rows * cols)
                .map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) as u8)
                .collect();
            let img = IdxTensor::images(count, rows, cols, data).unwrap();
            prop_assert_eq!(parse_idx(&img.to_bytes().unwrap()).unwrap(), img.clone());
            let lab = IdxTensor::labels(img.data.clone());
            prop_assert_eq!(parse_idx(&lab.to_bytes().unwrap()).unwrap(), lab);
        }
    }
}
