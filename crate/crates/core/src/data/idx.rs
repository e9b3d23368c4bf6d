//! IDX binary files: a big-endian magic, big-endian `u32` dimension sizes,
//! then unsigned bytes. Supported magics are `0x00000801` (labels, one
//! dimension) and `0x00000803` (images, three dimensions).

use std::path::Path;

use super::{Dataset, Labels};
use crate::error::{Error, Result};

const LABELS_MAGIC: u32 = 0x0000_0801;
const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxFormat {
            offset,
            message: format!(
                "header truncated: need 4 bytes, {} available",
                bytes.len().saturating_sub(offset)
            ),
        })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_u32(bytes, 0)?;
    let ndims = match magic {
        LABELS_MAGIC => 1,
        IMAGES_MAGIC => 3,
        other => {
            return Err(Error::IdxFormat {
                offset: 0,
                message: format!("bad magic 0x{other:08x}"),
            })
        }
    };
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(read_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::IdxFormat {
            offset: header,
            message: format!("payload length mismatch: expected {expected} bytes, found {actual}"),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an image file into an unlabeled dataset: one example per image,
/// pixels flattened row-major and scaled to `[0, 1]`.
pub fn read_idx(path: impl AsRef<Path>) -> Result<Dataset> {
    let arr = parse_idx(&read_file(path.as_ref())?)?;
    if arr.dims.len() != 3 {
        return Err(Error::IdxFormat {
            offset: 0,
            message: "expected an image file (magic 0x00000803)".into(),
        });
    }
    images_to_dataset(arr, Labels::Unlabeled)
}

fn images_to_dataset(arr: IdxArray, labels: Labels) -> Result<Dataset> {
    let p = arr.dims[1] * arr.dims[2];
    let features = arr.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Dataset::new(features, p, labels, "idx")
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let arr = parse_idx(&read_file(path.as_ref())?)?;
    if arr.dims.len() != 1 {
        return Err(Error::IdxFormat {
            offset: 0,
            message: "expected a label file (magic 0x00000801)".into(),
        });
    }
    Ok(arr.data.into_iter().map(usize::from).collect())
}

/// Images plus labels; the class count is one more than the largest label
/// unless given.
pub fn read_idx_pair(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let arr = parse_idx(&read_file(images.as_ref())?)?;
    if arr.dims.len() != 3 {
        return Err(Error::IdxFormat {
            offset: 0,
            message: "expected an image file (magic 0x00000803)".into(),
        });
    }
    let labels = read_idx_labels(labels)?;
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    images_to_dataset(arr, Labels::Classes { labels, num_classes: k })
}

/// Writes features as a `(n, 1, p)` image file, quantizing `x` to `round(255 x)`.
pub fn write_idx_images(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + dataset.features().len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [dataset.len(), 1, dataset.num_features()] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(
        dataset
            .features()
            .iter()
            .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &y in labels {
        let b = u8::try_from(y).map_err(|_| Error::invalid(format!("label {y} does not fit in a byte")))?;
        out.push(b);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
