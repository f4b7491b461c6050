//! IDX file reader (the MNIST distribution format).
//!
//! Header fields are big-endian u32: magic `0x00000803` followed by count,
//! rows and columns for images; magic `0x00000801` and count for labels.
//! Files may be gzip-compressed; compression is detected from the first two
//! bytes rather than the file name.

use super::{DataError, Dataset};
use flate2::read::GzDecoder;
use ndarray::{Array1, Array2};
use std::io::Read;
use std::path::Path;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = std::fs::read(path).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], field: usize, path: &Path) -> Result<u32, DataError> {
    let start = field * 4;
    bytes
        .get(start..start + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, "truncated IDX header"))
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages, DataError> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(
            path,
            format!("bad magic number {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(&bytes, 1, path)? as usize;
    let rows = be_u32(&bytes, 2, path)? as usize;
    let cols = be_u32(&bytes, 3, path)? as usize;
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(format_err(
            path,
            format!("expected {} pixel bytes, found {}", count * rows * cols, body.len()),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>, DataError> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(
            path,
            format!("bad magic number {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(&bytes, 1, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(format_err(
            path,
            format!("expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

/// Keeps the examples of two digits: `digit_a` becomes `+1`, `digit_b`
/// becomes `-1`; pixels are scaled to `[0, 1]`.
pub fn load_mnist_pair(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    digit_a: u8,
    digit_b: u8,
) -> Result<Dataset, DataError> {
    if digit_a == digit_b {
        return Err(DataError::DegeneratePair(digit_a));
    }
    let images = read_idx_images(&images_path)?;
    let labels = read_idx_labels(&labels_path)?;
    if images.count != labels.len() {
        return Err(format_err(
            labels_path.as_ref(),
            format!("{} labels for {} images", labels.len(), images.count),
        ));
    }
    let d = images.rows * images.cols;
    let keep: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == digit_a || labels[i] == digit_b)
        .collect();
    if keep.is_empty() {
        return Err(DataError::Empty);
    }
    let mut features = Array2::zeros((keep.len(), d));
    for (row, &i) in keep.iter().enumerate() {
        let src = &images.pixels[i * d..(i + 1) * d];
        for (dst, &px) in features.row_mut(row).iter_mut().zip(src) {
            *dst = f64::from(px) / 255.0;
        }
    }
    let y = Array1::from_iter(keep.iter().map(|&i| if labels[i] == digit_a { 1.0 } else { -1.0 }));
    Dataset::new(features, y, format!("mnist-{digit_a}-vs-{digit_b}"))
}
