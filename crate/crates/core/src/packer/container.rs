//! On-disk container: a fixed little-endian header followed by the metadata
//! stream and then the data stream.
//!
//! ```text
//! offset  size     field
//! 0       4        magic "SFPC"
//! 4       1        version (1)
//! 5       1        source format: 0 = FP32, 1 = BF16
//! 6       1        exponent variant: 0 = delta-base, 1 = fixed-bias
//! 7       1        fixed bias
//! 8       1        flags: bit 0 signless, bit 1 per-tensor mantissa width,
//!                  bit 2 non-finite bypass; other bits must be 0
//! 9       1        mantissa width
//! 10      1        lane drain word bits (16 or 32)
//! 11      1        rank r (0..=8)
//! 12      8*r      dimensions, u64 each
//! ..      8        value count
//! ..      8        group count
//! ..      8        metadata bits
//! ..      8        metadata length in bytes
//! ..      8        payload bits per lane (before flush)
//! ..      8        data length in bytes
//! ..               metadata stream, then data stream
//! ```
//!
//! Both section offsets follow from the header alone, so either stream can
//! be read without touching the other.

use serde::{Deserialize, Serialize};

use super::{PackConfig, PackedBlock};
use crate::error::{Error, Result};
use crate::floatcore::{FloatFormat, NonFinitePolicy};
use crate::gecko::{Variant, GROUP_VALUES};

pub const CONTAINER_MAGIC: [u8; 4] = *b"SFPC";
pub const CONTAINER_VERSION: u8 = 1;
const MAX_RANK: usize = 8;

const FLAG_SIGNLESS: u8 = 1 << 0;
const FLAG_PER_TENSOR: u8 = 1 << 1;
const FLAG_BYPASS: u8 = 1 << 2;

/// Where the mantissa width came from: one network-wide width or a
/// per-tensor table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MantissaMode {
    #[default]
    Global,
    PerTensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u8,
    pub format: FloatFormat,
    pub variant: Variant,
    pub bias: u8,
    pub signless: bool,
    pub mantissa_mode: MantissaMode,
    pub non_finite_bypass: bool,
    pub man_width: u8,
    pub lane_word_bits: u8,
    pub shape: Vec<u64>,
    pub value_count: u64,
    pub group_count: u64,
    pub meta_bits: u64,
    pub meta_len: u64,
    pub lane_bits: u64,
    pub data_len: u64,
}

impl ContainerHeader {
    pub fn new(cfg: &PackConfig, block: &PackedBlock, shape: &[u64]) -> Self {
        Self {
            version: CONTAINER_VERSION,
            format: cfg.format,
            variant: cfg.variant,
            bias: cfg.bias,
            signless: cfg.signless,
            mantissa_mode: cfg.mantissa_mode,
            non_finite_bypass: cfg.non_finite == NonFinitePolicy::Bypass,
            man_width: cfg.man_width as u8,
            lane_word_bits: cfg.lane_word_bits as u8,
            shape: shape.to_vec(),
            value_count: block.value_count,
            group_count: block.group_count,
            meta_bits: block.meta_bits,
            meta_len: block.meta.len() as u64,
            lane_bits: block.lane_bits,
            data_len: block.data.len() as u64,
        }
    }

    pub fn encoded_len(&self) -> usize {
        12 + 8 * self.shape.len() + 6 * 8
    }

    /// Byte offset of the metadata stream within the file.
    pub fn meta_offset(&self) -> u64 {
        self.encoded_len() as u64
    }

    /// Byte offset of the data stream within the file.
    pub fn data_offset(&self) -> u64 {
        self.meta_offset() + self.meta_len
    }

    pub fn pack_config(&self) -> PackConfig {
        PackConfig {
            format: self.format,
            man_width: self.man_width as u32,
            signless: self.signless,
            variant: self.variant,
            bias: self.bias,
            non_finite: if self.non_finite_bypass {
                NonFinitePolicy::Bypass
            } else {
                NonFinitePolicy::Reject
            },
            lane_word_bits: self.lane_word_bits as u32,
            mantissa_mode: self.mantissa_mode,
        }
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&CONTAINER_MAGIC);
        out.push(self.version);
        out.push(self.format.code());
        out.push(self.variant.code());
        out.push(self.bias);
        let mut flags = 0u8;
        if self.signless {
            flags |= FLAG_SIGNLESS;
        }
        if self.mantissa_mode == MantissaMode::PerTensor {
            flags |= FLAG_PER_TENSOR;
        }
        if self.non_finite_bypass {
            flags |= FLAG_BYPASS;
        }
        out.push(flags);
        out.push(self.man_width);
        out.push(self.lane_word_bits);
        out.push(self.shape.len() as u8);
        for d in &self.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in [
            self.value_count,
            self.group_count,
            self.meta_bits,
            self.meta_len,
            self.lane_bits,
            self.data_len,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Parses a header from the start of `bytes`.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != CONTAINER_MAGIC {
            return Err(Error::corrupt(0, "bad magic, not an SFPC container"));
        }
        let version = cur.u8()?;
        if version != CONTAINER_VERSION {
            return Err(Error::corrupt(4, format!("unsupported container version {version}")));
        }
        let format = FloatFormat::from_code(cur.u8()?)
            .ok_or_else(|| Error::corrupt(5, "unknown source format"))?;
        let variant =
            Variant::from_code(cur.u8()?).ok_or_else(|| Error::corrupt(6, "unknown exponent variant"))?;
        let bias = cur.u8()?;
        let flags = cur.u8()?;
        if flags & !(FLAG_SIGNLESS | FLAG_PER_TENSOR | FLAG_BYPASS) != 0 {
            return Err(Error::corrupt(8, format!("unknown flag bits {flags:#04x}")));
        }
        let man_width = cur.u8()?;
        if man_width as u32 > format.mantissa_bits() {
            return Err(Error::corrupt(9, format!("mantissa width {man_width} too large for {format}")));
        }
        let lane_word_bits = cur.u8()?;
        if !matches!(lane_word_bits, 16 | 32) {
            return Err(Error::corrupt(10, format!("lane word of {lane_word_bits} bits")));
        }
        let rank = cur.u8()? as usize;
        if rank > MAX_RANK {
            return Err(Error::corrupt(11, format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let shape = (0..rank).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let value_count = cur.u64()?;
        let group_count = cur.u64()?;
        let meta_bits = cur.u64()?;
        let meta_len = cur.u64()?;
        let lane_bits = cur.u64()?;
        let data_len = cur.u64()?;

        let elements = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::corrupt(12, "shape overflows"))?;
        if elements != value_count {
            return Err(Error::corrupt(
                12,
                format!("shape holds {elements} values, header says {value_count}"),
            ));
        }
        if group_count != value_count.div_ceil(GROUP_VALUES as u64) {
            return Err(Error::corrupt(12 + 8 * rank + 8, "group count does not match value count"));
        }
        if meta_len != meta_bits.div_ceil(8) {
            return Err(Error::corrupt(12 + 8 * rank + 24, "metadata length does not match its bit count"));
        }
        Ok(Self {
            version,
            format,
            variant,
            bias,
            signless: flags & FLAG_SIGNLESS != 0,
            mantissa_mode: if flags & FLAG_PER_TENSOR != 0 {
                MantissaMode::PerTensor
            } else {
                MantissaMode::Global
            },
            non_finite_bypass: flags & FLAG_BYPASS != 0,
            man_width,
            lane_word_bits,
            shape,
            value_count,
            group_count,
            meta_bits,
            meta_len,
            lane_bits,
            data_len,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::corrupt(self.pos, "header truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// A header with its two streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub header: ContainerHeader,
    pub block: PackedBlock,
}

impl Container {
    /// Compresses `values` of the given shape.
    pub fn pack(values: &[u32], shape: &[u64], cfg: &PackConfig) -> Result<Self> {
        let elements: u64 = shape.iter().product();
        if elements != values.len() as u64 {
            return Err(Error::contract(format!(
                "shape {shape:?} holds {elements} values, got {}",
                values.len()
            )));
        }
        if shape.len() > MAX_RANK {
            return Err(Error::contract(format!("rank {} exceeds {MAX_RANK}", shape.len())));
        }
        let block = super::compress(values, cfg)?;
        Ok(Self {
            header: ContainerHeader::new(cfg, &block, shape),
            block,
        })
    }

    pub fn unpack(&self) -> Result<Vec<u32>> {
        super::decompress(&self.block, &self.header)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            self.header.encoded_len() + self.block.meta.len() + self.block.data.len(),
        );
        self.header.write_to(&mut out);
        out.extend_from_slice(&self.block.meta);
        out.extend_from_slice(&self.block.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = ContainerHeader::parse(bytes)?;
        let meta_start = header.meta_offset() as usize;
        let data_start = header.data_offset() as usize;
        let end = data_start as u64 + header.data_len;
        if (bytes.len() as u64) < end {
            return Err(Error::corrupt(
                bytes.len(),
                format!("container truncated: {} of {end} bytes", bytes.len()),
            ));
        }
        if bytes.len() as u64 > end {
            return Err(Error::corrupt(end as usize, "trailing bytes after data stream"));
        }
        Ok(Self {
            block: PackedBlock {
                value_count: header.value_count,
                group_count: header.group_count,
                meta: bytes[meta_start..data_start].to_vec(),
                meta_bits: header.meta_bits,
                data: bytes[data_start..end as usize].to_vec(),
                lane_bits: header.lane_bits,
            },
            header,
        })
    }
}
