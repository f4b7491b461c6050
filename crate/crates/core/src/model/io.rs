//! Versioned binary model file.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "LDPMOE\0\0"
//! version  u32      currently 1
//! d        u64      input dimension
//! n        u64      expert count
//! hidden   u64      gating hidden width
//! mode     u8       0 = unconstrained, 1 = constrained
//! epsilon  f64      0 when unconstrained
//! tensors  f64...   experts (n*d), W1 (hidden*d), b1 (hidden),
//!                   W2 (hidden*hidden), b2 (hidden), W3 (n*hidden), b3 (n);
//!                   matrices row-major
//! ```

use super::{ExpertBank, GatingParams, LdpConfig, MoEModel, ModelError};
use ndarray::{Array1, Array2};
use std::io::{Read, Write};

pub const MODEL_MAGIC: &[u8; 8] = b"LDPMOE\0\0";
pub const MODEL_VERSION: u32 = 1;

fn put_f64s<'a>(out: &mut Vec<u8>, values: impl Iterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_model(mut out: impl Write, model: &MoEModel) -> Result<(), ModelError> {
    model.validate()?;
    let g = &model.gating;
    let mut buf = Vec::with_capacity(41 + 8 * model.parameter_count());
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for dim in [model.d(), model.n(), model.hidden()] {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    match model.ldp {
        LdpConfig::Unconstrained => {
            buf.push(0);
            buf.extend_from_slice(&0f64.to_le_bytes());
        }
        LdpConfig::Constrained { epsilon } => {
            buf.push(1);
            buf.extend_from_slice(&epsilon.to_le_bytes());
        }
    }
    put_f64s(&mut buf, model.experts.weights.iter());
    put_f64s(&mut buf, g.w1.iter());
    put_f64s(&mut buf, g.b1.iter());
    put_f64s(&mut buf, g.w2.iter());
    put_f64s(&mut buf, g.b2.iter());
    put_f64s(&mut buf, g.w3.iter());
    put_f64s(&mut buf, g.b3.iter());
    out.write_all(&buf)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn dim(&mut self) -> Result<usize, ModelError> {
        let v = u64::from_le_bytes(self.bytes()?);
        usize::try_from(v)
            .ok()
            .filter(|&v| v > 0 && v < (1 << 32))
            .ok_or_else(|| bad(format!("implausible dimension {v}")))
    }

    fn f64s(&mut self, count: usize) -> std::io::Result<Vec<f64>> {
        let mut raw = vec![0u8; count * 8];
        self.inner.read_exact(&mut raw)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>, ModelError> {
        let v = self.f64s(rows * cols)?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("rows*cols values"))
    }

    fn vector(&mut self, len: usize) -> Result<Array1<f64>, ModelError> {
        Ok(Array1::from(self.f64s(len)?))
    }
}

fn bad(message: String) -> ModelError {
    ModelError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, message))
}

pub fn read_model(input: impl Read) -> Result<MoEModel, ModelError> {
    let mut r = Reader { inner: input };
    let magic: [u8; 8] = r.bytes()?;
    if &magic != MODEL_MAGIC {
        return Err(bad("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != MODEL_VERSION {
        return Err(bad(format!("unsupported model version {version}")));
    }
    let (d, n, h) = (r.dim()?, r.dim()?, r.dim()?);
    let [mode] = r.bytes::<1>()?;
    let epsilon = f64::from_le_bytes(r.bytes()?);
    let ldp = match mode {
        0 => LdpConfig::Unconstrained,
        1 => LdpConfig::constrained(epsilon)?,
        other => return Err(bad(format!("unknown LDP mode byte {other}"))),
    };
    let experts = ExpertBank::new(r.matrix(n, d)?)?;
    let gating = GatingParams {
        w1: r.matrix(h, d)?,
        b1: r.vector(h)?,
        w2: r.matrix(h, h)?,
        b2: r.vector(h)?,
        w3: r.matrix(n, h)?,
        b3: r.vector(n)?,
    };
    MoEModel::new(experts, gating, ldp)
}

impl MoEModel {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        write_model(std::io::BufWriter::new(file), self)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<MoEModel, ModelError> {
        let file = std::fs::File::open(path)?;
        read_model(std::io::BufReader::new(file))
    }
}
