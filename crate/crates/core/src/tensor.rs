//! `RFT1` dense tensor files.
//!
//! Layout: the 4 magic bytes `RFT1`, a little-endian `u32` rank, `rank`
//! little-endian `u32` dims, then `product(dims)` little-endian `f32` values in
//! row-major order. Nothing may follow the payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RFT1";

/// A dense array exactly as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(Error::shape(format!(
                "tensor dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::shape(format!("tensor dims {dims:?} exceed u32")));
        }
        Ok(Self { dims, data })
    }

    /// Narrows 64-bit values to the 32-bit storage precision.
    pub fn from_f64(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        let data: Vec<f32> = values.iter().map(|&v| v as f32).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor payload".into()));
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(4)?;
        if magic != MAGIC {
            let mut found = [0u8; 4];
            found.copy_from_slice(magic);
            return Err(Error::BadMagic { found });
        }
        let rank = cursor.u32()? as usize;
        // Check the header fits before allocating `rank` entries.
        cursor.require(rank.checked_mul(4).ok_or(Error::Truncated {
            expected: usize::MAX,
            found: bytes.len(),
        })?)?;
        let raw_dims: Vec<u32> = (0..rank).map(|_| cursor.u32()).collect::<Result<_>>()?;
        let dims: Vec<usize> = raw_dims.iter().map(|&d| d as usize).collect();
        let count = element_count(&dims).map_err(|_| Error::DimOverflow {
            dims: raw_dims.clone(),
        })?;
        let payload_len = count
            .checked_mul(4)
            .ok_or(Error::DimOverflow { dims: raw_dims })?;
        let payload = cursor.take(payload_len)?;
        if cursor.pos != bytes.len() {
            return Err(Error::TrailingBytes {
                extra: bytes.len() - cursor.pos,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimOverflow {
            dims: dims.iter().map(|&d| d as u32).collect(),
        })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn require(&self, n: usize) -> Result<()> {
        let end = self.pos.checked_add(n);
        match end {
            Some(end) if end <= self.bytes.len() => Ok(()),
            _ => Err(Error::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.require(n)?;
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if tensor.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tensor payload".into()));
    }
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}
