//! Raw tensor files.
//!
//! A raw tensor is a flat little-endian array of FP32 (4-byte) or BF16
//! (2-byte) patterns. It may carry a small header:
//!
//! ```text
//! 0   4    magic "SFPR"
//! 4   1    format: 0 = FP32, 1 = BF16
//! 5   1    rank r
//! 6   8*r  dimensions, u64 each
//! ..       values
//! ```
//!
//! Headerless files need the format (and optionally a shape) from the
//! caller; without a shape they are read as one-dimensional.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::floatcore::FloatFormat;

pub const RAW_MAGIC: [u8; 4] = *b"SFPR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTensor {
    pub format: FloatFormat,
    pub shape: Vec<u64>,
    pub values: Vec<u32>,
}

impl RawTensor {
    pub fn new(format: FloatFormat, shape: Vec<u64>, values: Vec<u32>) -> Result<Self> {
        let n: u64 = shape.iter().product();
        if n != values.len() as u64 {
            return Err(Error::contract(format!(
                "shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self { format, shape, values })
    }

    pub fn to_bytes(&self, with_header: bool) -> Vec<u8> {
        let width = (self.format.width() / 8) as usize;
        let mut out = Vec::with_capacity(6 + 8 * self.shape.len() + width * self.values.len());
        if with_header {
            out.extend_from_slice(&RAW_MAGIC);
            out.push(self.format.code());
            out.push(self.shape.len() as u8);
            for d in &self.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        for &v in &self.values {
            match self.format {
                FloatFormat::Fp32 => out.extend_from_slice(&v.to_le_bytes()),
                FloatFormat::Bf16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            }
        }
        out
    }

    /// Parses a raw tensor. `format` and `shape` are required for headerless
    /// input and must agree with the header when one is present.
    pub fn from_bytes(bytes: &[u8], format: Option<FloatFormat>, shape: Option<&[u64]>) -> Result<Self> {
        let (fmt, dims, body) = if bytes.len() >= 6 && bytes[..4] == RAW_MAGIC {
            let fmt = FloatFormat::from_code(bytes[4])
                .ok_or_else(|| Error::corrupt(4, "unknown raw tensor format"))?;
            let rank = bytes[5] as usize;
            let body_start = 6 + 8 * rank;
            if bytes.len() < body_start {
                return Err(Error::corrupt(bytes.len(), "raw tensor header truncated"));
            }
            let dims: Vec<u64> = bytes[6..body_start]
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(f) = format {
                if f != fmt {
                    return Err(Error::config(format!("file holds {fmt}, {f} requested")));
                }
            }
            if let Some(s) = shape {
                if s != dims.as_slice() {
                    return Err(Error::config(format!("file shape {dims:?} differs from {s:?}")));
                }
            }
            (fmt, Some(dims), &bytes[body_start..])
        } else {
            let fmt = format.ok_or_else(|| Error::config("headerless tensor needs a format"))?;
            (fmt, shape.map(<[u64]>::to_vec), bytes)
        };
        let width = (fmt.width() / 8) as usize;
        if body.len() % width != 0 {
            return Err(Error::corrupt(
                bytes.len() - body.len() % width,
                format!("{} payload bytes is not a multiple of {width}", body.len()),
            ));
        }
        let values: Vec<u32> = match fmt {
            FloatFormat::Fp32 => body
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            FloatFormat::Bf16 => body
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as u32)
                .collect(),
        };
        let dims = dims.unwrap_or_else(|| vec![values.len() as u64]);
        RawTensor::new(fmt, dims, values)
    }
}

pub fn read_raw_tensor(path: &Path, format: Option<FloatFormat>, shape: Option<&[u64]>) -> Result<RawTensor> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    RawTensor::from_bytes(&bytes, format, shape)
}

pub fn write_raw_tensor(path: &Path, tensor: &RawTensor, with_header: bool) -> Result<()> {
    fs::write(path, tensor.to_bytes(with_header)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
