//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "A2SI" | version: u32 | ndim: u32 | dims: ndim × u32 | data: f64 LE, row-major
//! ```
//!
//! Complex tensors store the real plane followed by the imaginary plane; the
//! decoder tells the two apart by the payload length.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ComplexTensor, Tensor};

pub const MAGIC: &[u8; 4] = b"A2SI";
pub const FORMAT_VERSION: u32 = 1;
/// Upper bound on rank accepted by the decoder.
pub const MAX_NDIM: usize = 8;

/// A decoded tensor file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    Real(Tensor),
    Complex(ComplexTensor),
}

fn header(dims: &[usize], out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.ndim() + 8 * t.len());
    header(t.dims(), &mut out);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_complex(t: &ComplexTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.dims().len() + 16 * t.len());
    header(t.dims(), &mut out);
    for v in t.re().iter().chain(t.im()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated tensor data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes a complete tensor file.
pub fn decode(bytes: &[u8]) -> Result<StoredTensor> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let ndim = c.u32()? as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!("rank {ndim} out of range")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut n: usize = 1;
    for _ in 0..ndim {
        let d = c.u32()? as usize;
        if d == 0 {
            return Err(Error::Format("zero-sized dimension".into()));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::Format("element count overflows".into()))?;
        dims.push(d);
    }
    let remaining = bytes.len() - c.pos;
    let real_bytes = n
        .checked_mul(8)
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let read = |c: &mut Cursor, count: usize| -> Result<Vec<f64>> {
        let raw = c.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect())
    };
    if remaining == real_bytes {
        let data = read(&mut c, n)?;
        Ok(StoredTensor::Real(Tensor::new(dims, data)?))
    } else if Some(remaining) == real_bytes.checked_mul(2) {
        let re = read(&mut c, n)?;
        let im = read(&mut c, n)?;
        Ok(StoredTensor::Complex(ComplexTensor::new(dims, re, im)?))
    } else {
        Err(Error::Format(format!(
            "payload of {remaining} bytes does not fit {n} elements"
        )))
    }
}

/// Decodes a file that must hold a real tensor.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    match decode(bytes)? {
        StoredTensor::Real(t) => Ok(t),
        StoredTensor::Complex(_) => Err(Error::Format("expected a real tensor".into())),
    }
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn write_complex(path: &Path, t: &ComplexTensor) -> Result<()> {
    std::fs::write(path, encode_complex(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn read_stored(path: &Path) -> Result<StoredTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
