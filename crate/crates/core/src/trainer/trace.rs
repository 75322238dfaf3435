//! Binary tensor traces.
//!
//! Every stored tensor of every batch can be logged with its raw patterns.
//! All integers are little-endian.
//!
//! ```text
//! header
//! 0   4   magic "SFPT"
//! 4   1   version (1)
//! 5   1   format: 0 = FP32, 1 = BF16
//! 6   1   variant used for footprint accounting: 0 = delta-base, 1 = fixed-bias
//!
//! record (repeated until end of file)
//! 0   4   epoch (u32)
//! 4   8   batch index within the run (u64)
//! 12  4   tensor id (u32)
//! 16  4   layer (u32)
//! 20  1   kind: 0 = weights, 1 = activations
//! 21  1   stored mantissa width
//! 22  1   signless flag
//! 23  8   value count n (u64)
//! 31  ..  n patterns, 4 bytes (FP32) or 2 bytes (BF16) each
//! ```

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::bitlearn::TensorKind;
use crate::error::{Error, Result};
use crate::floatcore::FloatFormat;
use crate::gecko::Variant;
use crate::packer::{compress, PackConfig};

pub const TRACE_MAGIC: [u8; 4] = *b"SFPT";
pub const TRACE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub epoch: u32,
    pub batch: u64,
    pub tensor: u32,
    pub layer: u32,
    pub kind: TensorKind,
    pub width: u32,
    pub signless: bool,
    pub values: Vec<u32>,
}

impl TraceRecord {
    /// Counts of each biased exponent value.
    pub fn exponent_histogram(&self, format: FloatFormat) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &v in &self.values {
            h[((v >> format.mantissa_bits()) & 0xFF) as usize] += 1;
        }
        h
    }

    pub fn pack_config(&self, format: FloatFormat, variant: Variant) -> PackConfig {
        PackConfig::lossless(format)
            .with_man_width(self.width)
            .with_signless(self.signless)
            .with_variant(variant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub format: FloatFormat,
    pub variant: Variant,
    pub records: Vec<TraceRecord>,
}

pub struct TraceWriter<W: Write> {
    out: BufWriter<W>,
    format: FloatFormat,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, format: FloatFormat, variant: Variant) -> Result<Self> {
        let mut out = BufWriter::new(out);
        out.write_all(&TRACE_MAGIC)?;
        out.write_all(&[TRACE_VERSION, format.code(), variant.code()])?;
        Ok(Self { out, format })
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<()> {
        let o = &mut self.out;
        o.write_all(&r.epoch.to_le_bytes())?;
        o.write_all(&r.batch.to_le_bytes())?;
        o.write_all(&r.tensor.to_le_bytes())?;
        o.write_all(&r.layer.to_le_bytes())?;
        let kind = match r.kind {
            TensorKind::Weights => 0u8,
            TensorKind::Activations => 1,
        };
        o.write_all(&[kind, r.width as u8, r.signless as u8])?;
        o.write_all(&(r.values.len() as u64).to_le_bytes())?;
        for &v in &r.values {
            match self.format {
                FloatFormat::Fp32 => o.write_all(&v.to_le_bytes())?,
                FloatFormat::Bf16 => o.write_all(&(v as u16).to_le_bytes())?,
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

impl Trace {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 || bytes[..4] != TRACE_MAGIC {
            return Err(Error::corrupt(0, "not a tensor trace"));
        }
        if bytes[4] != TRACE_VERSION {
            return Err(Error::corrupt(4, format!("unsupported trace version {}", bytes[4])));
        }
        let format = FloatFormat::from_code(bytes[5]).ok_or_else(|| Error::corrupt(5, "unknown format"))?;
        let variant = Variant::from_code(bytes[6]).ok_or_else(|| Error::corrupt(6, "unknown variant"))?;
        let width = (format.width() / 8) as usize;
        let mut pos = 7;
        let mut records = Vec::new();
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(*pos..*pos + n)
                .ok_or_else(|| Error::corrupt(*pos, "trace record truncated"))?;
            *pos += n;
            Ok(s)
        };
        while pos < bytes.len() {
            let start = pos;
            let fixed = take(&mut pos, 31)?;
            let u32_at = |o: usize| u32::from_le_bytes(fixed[o..o + 4].try_into().unwrap());
            let u64_at = |o: usize| u64::from_le_bytes(fixed[o..o + 8].try_into().unwrap());
            let kind = match fixed[20] {
                0 => TensorKind::Weights,
                1 => TensorKind::Activations,
                k => return Err(Error::corrupt(start + 20, format!("unknown tensor kind {k}"))),
            };
            if fixed[21] as u32 > format.mantissa_bits() || fixed[22] > 1 {
                return Err(Error::corrupt(start + 21, "bad width or flag"));
            }
            let count = u64_at(23);
            let len = usize::try_from(count)
                .ok()
                .and_then(|c| c.checked_mul(width))
                .ok_or_else(|| Error::corrupt(start + 23, "value count overflows"))?;
            let body = take(&mut pos, len)?;
            let values = match format {
                FloatFormat::Fp32 => body
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                FloatFormat::Bf16 => body
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as u32)
                    .collect(),
            };
            records.push(TraceRecord {
                epoch: u32_at(0),
                batch: u64_at(4),
                tensor: u32_at(12),
                layer: u32_at(16),
                kind,
                width: fixed[21] as u32,
                signless: fixed[22] == 1,
                values,
            });
        }
        Ok(Self { format, variant, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&bytes)
    }

    /// Packs every record for real and returns metadata plus payload bits
    /// per record.
    pub fn replay_sizes(&self) -> Result<Vec<u64>> {
        self.records
            .iter()
            .map(|r| {
                let block = compress(&r.values, &r.pack_config(self.format, self.variant))?;
                Ok(block.meta_bits + block.data_bits())
            })
            .collect()
    }
}
