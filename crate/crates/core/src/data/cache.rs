//! Binary dataset cache.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MOEDATA\0"
//! version  u32      currently 1
//! m        u64      rows
//! d        u64      features per row
//! body     m*d f64  row-major features
//! labels   m   i8   +1 / -1
//! meta_len u32
//! meta     JSON     {"source_tag": ..., "feature_names": [...] | null}
//! ```

use super::{DataError, Dataset};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CACHE_MAGIC: &[u8; 8] = b"MOEDATA\0";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    source_tag: String,
    feature_names: Option<Vec<String>>,
}

pub fn write_cache(mut out: impl Write, data: &Dataset) -> std::io::Result<()> {
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&(data.len() as u64).to_le_bytes())?;
    out.write_all(&(data.dim() as u64).to_le_bytes())?;
    let mut body = Vec::with_capacity(data.len() * data.dim() * 8);
    for v in data.features().iter() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&body)?;
    let labels: Vec<u8> = data.labels().iter().map(|&y| (y as i8) as u8).collect();
    out.write_all(&labels)?;
    let meta = serde_json::to_vec(&Meta {
        source_tag: data.source_tag().to_owned(),
        feature_names: data.feature_names().map(<[String]>::to_vec),
    })
    .map_err(std::io::Error::other)?;
    out.write_all(&(meta.len() as u32).to_le_bytes())?;
    out.write_all(&meta)
}

fn invalid(message: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, message.into())
}

fn read_array<const N: usize>(input: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_cache(mut input: impl Read) -> std::io::Result<Dataset> {
    let magic: [u8; 8] = read_array(&mut input)?;
    if &magic != CACHE_MAGIC {
        return Err(invalid("not a dataset cache file"));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != CACHE_VERSION {
        return Err(invalid(format!("unsupported cache version {version}")));
    }
    let m = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let d = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let mut body = vec![0u8; m * d * 8];
    input.read_exact(&mut body)?;
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut raw_labels = vec![0u8; m];
    input.read_exact(&mut raw_labels)?;
    let meta_len = u32::from_le_bytes(read_array(&mut input)?) as usize;
    let mut meta = vec![0u8; meta_len];
    input.read_exact(&mut meta)?;
    let meta: Meta = serde_json::from_slice(&meta).map_err(|e| invalid(e.to_string()))?;

    let features = Array2::from_shape_vec((m, d), values).map_err(|e| invalid(e.to_string()))?;
    let labels = Array1::from_iter(raw_labels.iter().map(|&b| f64::from(b as i8)));
    let mut data =
        Dataset::new(features, labels, meta.source_tag).map_err(|e| invalid(e.to_string()))?;
    if let Some(names) = meta.feature_names {
        data = data
            .with_feature_names(names)
            .map_err(|e| invalid(e.to_string()))?;
    }
    Ok(data)
}

/// Reads `cache_path` if it holds a valid cache, otherwise builds the
/// dataset and writes the cache for next time.
pub fn load_or_build(
    cache_path: impl AsRef<Path>,
    build: impl FnOnce() -> Result<Dataset, DataError>,
) -> Result<Dataset, DataError> {
    let path = cache_path.as_ref();
    if let Ok(file) = std::fs::File::open(path) {
        if let Ok(data) = read_cache(std::io::BufReader::new(file)) {
            return Ok(data);
        }
    }
    let data = build()?;
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_cache(std::io::BufWriter::new(file), &data).map_err(io_err)?;
    Ok(data)
}
