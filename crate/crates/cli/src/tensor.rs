//! `CAMT` tensor files.
//!
//! Layout: magic `CAMT`, `u16` version (1), `u16` rank, `rank × u32` dims, then
//! `product(dims)` little-endian `f32` values in row-major order. Score maps
//! are stored as rank 3 `C × H × W`.

use std::path::Path;

use camforge_core::{ScoreMap, Shape};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"CAMT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

/// Decoding failure at a byte offset; the caller attaches the file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub offset: usize,
    pub message: String,
}

impl DecodeError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        DecodeError {
            offset,
            message: message.into(),
        }
    }

    pub fn at(self, path: &Path) -> CliError {
        CliError::Format {
            path: path.to_path_buf(),
            offset: self.offset,
            message: self.message,
        }
    }
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self) -> Vec<u8> {
        assert_eq!(self.len(), self.data.len(), "dims do not match payload");
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u16).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let take = |at: usize, n: usize, what: &str| -> Result<&[u8], DecodeError> {
            bytes
                .get(at..at + n)
                .ok_or_else(|| DecodeError::new(bytes.len(), format!("file ends inside the {what}")))
        };
        if take(0, 4, "magic")? != MAGIC {
            return Err(DecodeError::new(0, "bad magic, expected CAMT"));
        }
        let version = u16::from_le_bytes(take(4, 2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(DecodeError::new(4, format!("unsupported version {version}")));
        }
        let rank = u16::from_le_bytes(take(6, 2, "rank")?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut at = 8;
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(at, 4, "dims")?.try_into().unwrap()));
            at += 4;
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| DecodeError::new(8, "dims overflow"))?;
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| DecodeError::new(8, "dims overflow"))?;
        let payload = &bytes[at..];
        if payload.len() != expected {
            return Err(DecodeError::new(
                at + payload.len().min(expected),
                format!("payload is {} bytes, dims need {expected}", payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Tensor::decode(&bytes).map_err(|e| e.at(path))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    pub fn from_scores(scores: &ScoreMap) -> Self {
        let s = scores.shape();
        Tensor {
            dims: vec![s.channels as u32, s.height as u32, s.width as u32],
            data: scores.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_values(dims: Vec<u32>, values: &[f64]) -> Self {
        Tensor {
            dims,
            data: values.iter().map(|&v| v as f32).collect(),
        }
    }

    /// Rank 3 tensors as `C × H × W`; rank 2 as a single channel.
    pub fn to_scores(&self, path: &Path) -> Result<ScoreMap> {
        let shape = match self.dims[..] {
            [c, h, w] => Shape::new(c as usize, h as usize, w as usize),
            [h, w] => Shape::new(1, h as usize, w as usize),
            _ => {
                return Err(CliError::Shape(format!(
                    "{}: score tensors have rank 2 or 3, got {}",
                    path.display(),
                    self.dims.len()
                )))
            }
        };
        let data = self.data.iter().map(|&v| f64::from(v)).collect();
        ScoreMap::new(shape, data).map_err(|e| match e {
            camforge_core::Error::NonFinite(_) => CliError::Format {
                path: path.to_path_buf(),
                offset: 8 + 4 * self.dims.len(),
                message: "payload holds non-finite values".into(),
            },
            other => CliError::Shape(format!("{}: {other}", path.display())),
        })
    }
}
