//! Software model of the tandem column packer.
//!
//! Values are taken in groups of 64 and viewed as 8 rows of 8. Column `c` of
//! every group feeds lane `c`. Each row gets a container of
//! `exponent field + mantissa width + sign` bits shared by all 8 lanes, so
//! the lanes always hold the same number of bits.
//!
//! Within a container the value is laid out as `[exponent field, sign,
//! mantissa]` from most to least significant bit and appended to its lane
//! LSB-first:
//!
//! * mantissa: the top `man_width` stored mantissa bits,
//! * sign: one bit, omitted for signless tensors,
//! * exponent field: the 8-bit column base in row 0 of a delta-base group,
//!   otherwise a Gecko delta field (`w` magnitude bits then a sign bit, or
//!   nothing when the row's width is 0).
//!
//! Width codes go to a separate metadata stream, 3 bits per coded row:
//! rows 1..7 for delta-base groups, all 8 rows for fixed-bias groups (each
//! row is one fixed-bias group of 8). Lanes are continuous across groups and
//! are zero-filled to a whole drain word at the end of the tensor. The data
//! stream interleaves drain words lane by lane: word 0 of lanes 0..7, then
//! word 1 of lanes 0..7, and so on.

mod container;
mod rawfile;

pub use container::{Container, ContainerHeader, MantissaMode, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use rawfile::{read_raw_tensor, write_raw_tensor, RawTensor, RAW_MAGIC};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitio::{BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::floatcore::{decompose, keep_mask, recompose, FloatFormat, FloatTriple, NonFinitePolicy};
use crate::gecko::{
    self, apply_delta, bias_width, delta_field, row_width, sign_magnitude, split_field, ExponentGroup,
    Variant, WidthCode, BASE_BITS, GROUP_COLS, GROUP_ROWS, GROUP_VALUES, WIDTH_CODE_BITS,
};

pub const LANES: usize = GROUP_COLS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackConfig {
    pub format: FloatFormat,
    pub man_width: u32,
    pub signless: bool,
    pub variant: Variant,
    pub bias: u8,
    pub non_finite: NonFinitePolicy,
    pub lane_word_bits: u32,
    pub mantissa_mode: MantissaMode,
}

impl PackConfig {
    /// Lossless settings: full mantissa, signed, delta-base exponents and a
    /// drain word as wide as one value.
    pub fn lossless(format: FloatFormat) -> Self {
        Self {
            format,
            man_width: format.mantissa_bits(),
            signless: false,
            variant: Variant::DeltaBase,
            bias: gecko::DEFAULT_BIAS,
            non_finite: NonFinitePolicy::Reject,
            lane_word_bits: format.width(),
            mantissa_mode: MantissaMode::Global,
        }
    }

    pub fn with_man_width(mut self, man_width: u32) -> Self {
        self.man_width = man_width;
        self
    }

    pub fn with_signless(mut self, signless: bool) -> Self {
        self.signless = signless;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_bias(mut self, bias: u8) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_non_finite(mut self, policy: NonFinitePolicy) -> Self {
        self.non_finite = policy;
        self
    }

    pub fn with_lane_word_bits(mut self, bits: u32) -> Self {
        self.lane_word_bits = bits;
        self
    }

    pub fn with_mantissa_mode(mut self, mode: MantissaMode) -> Self {
        self.mantissa_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.man_width > self.format.mantissa_bits() {
            return Err(Error::contract(format!(
                "mantissa width {} exceeds {} for {}",
                self.man_width,
                self.format.mantissa_bits(),
                self.format
            )));
        }
        if !matches!(self.lane_word_bits, 16 | 32) {
            return Err(Error::contract(format!(
                "lane drain word must be 16 or 32 bits, got {}",
                self.lane_word_bits
            )));
        }
        Ok(())
    }

    fn sign_bits(&self) -> u32 {
        u32::from(!self.signless)
    }

    /// Width codes stored per group in the metadata stream.
    pub fn codes_per_group(&self) -> usize {
        match self.variant {
            Variant::DeltaBase => GROUP_ROWS - 1,
            Variant::FixedBias => GROUP_ROWS,
        }
    }
}

/// How a row's exponents are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExponentField {
    /// Full 8-bit column base (row 0 of a delta-base group).
    Base,
    /// Sign-magnitude delta sized by a width code.
    Delta(WidthCode),
}

impl ExponentField {
    pub fn bits(self) -> u32 {
        match self {
            ExponentField::Base => BASE_BITS,
            ExponentField::Delta(code) => code.field_bits(),
        }
    }
}

/// Container layout shared by the 8 values of one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowDescriptor {
    pub exponent: ExponentField,
    pub man_width: u32,
    pub signless: bool,
}

impl RowDescriptor {
    pub fn container_bits(&self) -> u32 {
        self.exponent.bits() + self.man_width + u32::from(!self.signless)
    }
}

/// Compressed tensor: metadata and data streams plus the counts needed to
/// interpret them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBlock {
    pub value_count: u64,
    pub group_count: u64,
    pub meta: Vec<u8>,
    pub meta_bits: u64,
    pub data: Vec<u8>,
    /// Payload bits per lane before the end-of-tensor flush.
    pub lane_bits: u64,
}

impl PackedBlock {
    pub fn pad_count(&self) -> u64 {
        self.group_count * GROUP_VALUES as u64 - self.value_count
    }

    /// Payload bits across all lanes, excluding flush padding.
    pub fn data_bits(&self) -> u64 {
        self.lane_bits * LANES as u64
    }

    /// `(M + C) / O` over the whole value: metadata bits plus payload bits
    /// over the raw tensor size. Flush padding is excluded.
    pub fn ratio(&self, format: FloatFormat) -> gecko::RatioAccount {
        gecko::RatioAccount {
            metadata_bits: self.meta_bits,
            payload_bits: self.data_bits(),
            original_bits: self.value_count * format.width() as u64,
        }
    }
}

/// Closed-form stream sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StreamSize {
    pub meta_bits: u64,
    pub lane_bits: u64,
    /// Data stream length in bits including flush padding.
    pub data_stream_bits: u64,
}

impl StreamSize {
    pub fn data_bits(&self) -> u64 {
        self.lane_bits * LANES as u64
    }

    pub fn total_bits(&self) -> u64 {
        self.meta_bits + self.data_bits()
    }
}

struct GroupLayout {
    triples: [FloatTriple; GROUP_VALUES],
    rows: [RowDescriptor; GROUP_ROWS],
    codes: Vec<WidthCode>,
}

/// Validates values and derives one group's row layout.
fn layout_group(chunk: &[u32], first_index: usize, cfg: &PackConfig) -> Result<GroupLayout> {
    let fmt = cfg.format;
    let m = fmt.mantissa_bits();
    let mut triples = [FloatTriple {
        sign: false,
        exponent: 0,
        mantissa: 0,
    }; GROUP_VALUES];
    let mut exps = Vec::with_capacity(chunk.len());
    for (i, &bits) in chunk.iter().enumerate() {
        let bits = bits & fmt.pattern_mask();
        let t = decompose(bits, fmt);
        if t.is_non_finite() {
            match cfg.non_finite {
                NonFinitePolicy::Reject => return Err(Error::NonFinite { bits }),
                NonFinitePolicy::Bypass => {
                    if t.mantissa != 0 && t.mantissa & keep_mask(cfg.man_width, m) == 0 {
                        return Err(Error::contract(format!(
                            "NaN {bits:#x} would collapse to infinity at mantissa width {}",
                            cfg.man_width
                        )));
                    }
                }
            }
        }
        if cfg.signless && t.sign {
            return Err(Error::NegativeInSignless {
                index: first_index + i,
                bits,
            });
        }
        triples[i] = t;
        exps.push(t.exponent);
    }
    let padded: [u8; GROUP_VALUES] = match cfg.variant {
        Variant::DeltaBase => *ExponentGroup::from_partial(&exps)?.exponents(),
        Variant::FixedBias => {
            let mut e = [cfg.bias; GROUP_VALUES];
            e[..exps.len()].copy_from_slice(&exps);
            e
        }
    };
    for (i, t) in triples.iter_mut().enumerate().skip(chunk.len()) {
        t.exponent = padded[i];
    }

    let row_exps = |r: usize| -> [u8; GROUP_COLS] {
        let mut out = [0u8; GROUP_COLS];
        out.copy_from_slice(&padded[r * GROUP_COLS..(r + 1) * GROUP_COLS]);
        out
    };
    let mut rows = [RowDescriptor {
        exponent: ExponentField::Base,
        man_width: cfg.man_width,
        signless: cfg.signless,
    }; GROUP_ROWS];
    let mut codes = Vec::with_capacity(cfg.codes_per_group());
    match cfg.variant {
        Variant::DeltaBase => {
            let bases = row_exps(0);
            for (r, row) in rows.iter_mut().enumerate().skip(1) {
                let code = row_width(&row_exps(r), &bases);
                row.exponent = ExponentField::Delta(code);
                codes.push(code);
            }
        }
        Variant::FixedBias => {
            for (r, row) in rows.iter_mut().enumerate() {
                let code = bias_width(&row_exps(r), cfg.bias);
                row.exponent = ExponentField::Delta(code);
                codes.push(code);
            }
        }
    }
    Ok(GroupLayout { triples, rows, codes })
}

/// Row descriptors for every group, in order.
pub fn row_layouts(values: &[u32], cfg: &PackConfig) -> Result<Vec<[RowDescriptor; GROUP_ROWS]>> {
    cfg.validate()?;
    values
        .chunks(GROUP_VALUES)
        .enumerate()
        .map(|(g, chunk)| layout_group(chunk, g * GROUP_VALUES, cfg).map(|l| l.rows))
        .collect()
}

struct PackedGroup {
    codes: Vec<WidthCode>,
    lanes: Vec<BitWriter>,
}

fn pack_group(chunk: &[u32], first_index: usize, cfg: &PackConfig) -> Result<PackedGroup> {
    let layout = layout_group(chunk, first_index, cfg)?;
    let m = cfg.format.mantissa_bits();
    let mw = cfg.man_width;
    let sign_bits = cfg.sign_bits();
    let lane_bits: u32 = layout.rows.iter().map(RowDescriptor::container_bits).sum();
    let mut lanes: Vec<BitWriter> = (0..LANES)
        .map(|_| BitWriter::with_capacity_bits(lane_bits as usize))
        .collect();
    let bases: [u8; GROUP_COLS] = std::array::from_fn(|c| layout.triples[c].exponent);
    for (r, row) in layout.rows.iter().enumerate() {
        for (c, lane) in lanes.iter_mut().enumerate() {
            let t = layout.triples[r * GROUP_COLS + c];
            let exp_field = match row.exponent {
                ExponentField::Base => t.exponent as u64,
                ExponentField::Delta(code) => {
                    let reference = match cfg.variant {
                        Variant::DeltaBase => bases[c],
                        Variant::FixedBias => cfg.bias,
                    };
                    let (mag, neg) = sign_magnitude(t.exponent, reference);
                    delta_field(mag, neg, code)
                }
            };
            let mantissa = (t.mantissa >> (m - mw)) as u64;
            let sign = if cfg.signless { 0 } else { t.sign as u64 };
            let container = mantissa | (sign << mw) | (exp_field << (mw + sign_bits));
            lane.write(container, row.container_bits());
        }
    }
    Ok(PackedGroup {
        codes: layout.codes,
        lanes,
    })
}

/// Compresses a tensor of raw FP32/BF16 patterns.
///
/// Groups are packed in parallel and merged in group order, so the output
/// does not depend on the worker count.
pub fn compress(values: &[u32], cfg: &PackConfig) -> Result<PackedBlock> {
    cfg.validate()?;
    let groups: Vec<PackedGroup> = values
        .par_chunks(GROUP_VALUES)
        .enumerate()
        .map(|(g, chunk)| pack_group(chunk, g * GROUP_VALUES, cfg))
        .collect::<Result<_>>()?;

    let mut meta = BitWriter::with_capacity_bits(groups.len() * cfg.codes_per_group() * 3);
    let lane_bits: usize = groups.iter().map(|g| g.lanes[0].len()).sum();
    let mut lanes: Vec<BitWriter> = (0..LANES)
        .map(|_| BitWriter::with_capacity_bits(lane_bits))
        .collect();
    for group in &groups {
        for code in &group.codes {
            meta.write(code.code() as u64, WIDTH_CODE_BITS);
        }
        for (lane, part) in lanes.iter_mut().zip(&group.lanes) {
            lane.append(part);
        }
    }
    let meta_bits = meta.len() as u64;
    let word_bytes = (cfg.lane_word_bits / 8) as usize;
    for lane in &mut lanes {
        lane.pad_to(cfg.lane_word_bits as usize);
    }
    let words = lane_bits.div_ceil(cfg.lane_word_bits as usize);
    let mut data = Vec::with_capacity(words * word_bytes * LANES);
    for w in 0..words {
        for lane in &lanes {
            data.extend_from_slice(&lane.as_bytes()[w * word_bytes..(w + 1) * word_bytes]);
        }
    }
    Ok(PackedBlock {
        value_count: values.len() as u64,
        group_count: groups.len() as u64,
        meta: meta.into_bytes(),
        meta_bits,
        data,
        lane_bits: lane_bits as u64,
    })
}

/// Closed-form stream size, computed from row widths without packing.
pub fn predict_size(values: &[u32], cfg: &PackConfig) -> Result<StreamSize> {
    let layouts = row_layouts(values, cfg)?;
    let lane_bits: u64 = layouts
        .iter()
        .flat_map(|rows| rows.iter())
        .map(|r| r.container_bits() as u64)
        .sum();
    let word = cfg.lane_word_bits as u64;
    Ok(StreamSize {
        meta_bits: layouts.len() as u64 * cfg.codes_per_group() as u64 * WIDTH_CODE_BITS as u64,
        lane_bits,
        data_stream_bits: lane_bits.div_ceil(word) * word * LANES as u64,
    })
}

fn decode_params(header: &ContainerHeader) -> PackConfig {
    PackConfig {
        format: header.format,
        man_width: header.man_width as u32,
        signless: header.signless,
        variant: header.variant,
        bias: header.bias,
        non_finite: if header.non_finite_bypass {
            NonFinitePolicy::Bypass
        } else {
            NonFinitePolicy::Reject
        },
        lane_word_bits: header.lane_word_bits as u32,
        mantissa_mode: header.mantissa_mode,
    }
}

/// Rebuilds the value patterns. Dropped mantissa bits come back as zeros and
/// signless tensors get sign 0. Nothing is returned unless the whole block
/// decodes.
pub fn decompress(block: &PackedBlock, header: &ContainerHeader) -> Result<Vec<u32>> {
    let cfg = decode_params(header);
    cfg.validate()?;
    if block.value_count != header.value_count || block.group_count != header.group_count {
        return Err(Error::corrupt(0, "block counts disagree with the header"));
    }
    let expected_groups = block.value_count.div_ceil(GROUP_VALUES as u64);
    if block.group_count != expected_groups {
        return Err(Error::corrupt(
            0,
            format!("{} values need {expected_groups} groups, header says {}", block.value_count, block.group_count),
        ));
    }
    let codes_per_group = cfg.codes_per_group();
    let expected_meta_bits = block.group_count * codes_per_group as u64 * WIDTH_CODE_BITS as u64;
    if block.meta_bits != expected_meta_bits || block.meta.len() as u64 != expected_meta_bits.div_ceil(8) {
        return Err(Error::corrupt(
            block.meta.len().min(expected_meta_bits.div_ceil(8) as usize),
            format!(
                "metadata holds {} bits in {} bytes, {} groups need {expected_meta_bits} bits",
                block.meta_bits,
                block.meta.len(),
                block.group_count
            ),
        ));
    }
    let word_bits = cfg.lane_word_bits as u64;
    let word_bytes = (word_bits / 8) as usize;
    let words = block.lane_bits.div_ceil(word_bits) as usize;
    if block.data.len() != words * word_bytes * LANES {
        return Err(Error::corrupt(
            block.data.len().min(words * word_bytes * LANES),
            format!(
                "data stream is {} bytes, {} lane bits need {}",
                block.data.len(),
                block.lane_bits,
                words * word_bytes * LANES
            ),
        ));
    }

    // Width codes, and from them each group's starting bit in the lanes.
    let mut meta = BitReader::new(&block.meta, block.meta_bits as usize);
    let mut group_rows = Vec::with_capacity(block.group_count as usize);
    let mut offsets = Vec::with_capacity(block.group_count as usize);
    let mut offset = 0u64;
    for _ in 0..block.group_count {
        let mut rows = [RowDescriptor {
            exponent: ExponentField::Base,
            man_width: cfg.man_width,
            signless: cfg.signless,
        }; GROUP_ROWS];
        let first_coded = GROUP_ROWS - codes_per_group;
        for row in rows.iter_mut().skip(first_coded) {
            let code = WidthCode::from_code(meta.read(WIDTH_CODE_BITS)? as u8)?;
            row.exponent = ExponentField::Delta(code);
        }
        offsets.push(offset);
        offset += rows.iter().map(|r| r.container_bits() as u64).sum::<u64>();
        group_rows.push(rows);
    }
    if offset != block.lane_bits {
        return Err(Error::corrupt(
            block.meta.len(),
            format!("width codes describe {offset} bits per lane, header says {}", block.lane_bits),
        ));
    }

    let mut lanes: Vec<Vec<u8>> = (0..LANES).map(|_| Vec::with_capacity(words * word_bytes)).collect();
    for (i, word) in block.data.chunks_exact(word_bytes).enumerate() {
        lanes[i % LANES].extend_from_slice(word);
    }

    let mut values: Vec<[u32; GROUP_VALUES]> = group_rows
        .par_iter()
        .zip(offsets.par_iter())
        .map(|(rows, &start)| unpack_group(&lanes, rows, start, &cfg))
        .collect::<Result<_>>()?;

    // Flush padding must be zero.
    for lane in &lanes {
        let mut r = BitReader::new(lane, lane.len() * 8);
        r.skip(block.lane_bits as usize)?;
        while r.remaining() > 0 {
            let take = r.remaining().min(64) as u32;
            if r.read(take)? != 0 {
                return Err(Error::corrupt(block.data.len(), "non-zero lane flush padding"));
            }
        }
    }

    let n = block.value_count as usize;
    let mut out = Vec::with_capacity(n);
    for g in values.iter_mut() {
        out.extend_from_slice(g);
    }
    out.truncate(n);
    Ok(out)
}

fn unpack_group(
    lanes: &[Vec<u8>],
    rows: &[RowDescriptor; GROUP_ROWS],
    start: u64,
    cfg: &PackConfig,
) -> Result<[u32; GROUP_VALUES]> {
    let fmt = cfg.format;
    let m = fmt.mantissa_bits();
    let mw = cfg.man_width;
    let sign_bits = cfg.sign_bits();
    let mut out = [0u32; GROUP_VALUES];
    let mut bases = [0u8; GROUP_COLS];
    for (c, lane) in lanes.iter().enumerate() {
        let mut r = BitReader::new(lane, lane.len() * 8);
        r.skip(start as usize)?;
        for (row_idx, row) in rows.iter().enumerate() {
            let container = r.read(row.container_bits())?;
            let mantissa = (container & ((1u64 << mw) - 1)) as u32;
            let sign = sign_bits == 1 && (container >> mw) & 1 == 1;
            let exp_field = container >> (mw + sign_bits);
            let exponent = match row.exponent {
                ExponentField::Base => {
                    bases[c] = exp_field as u8;
                    exp_field as u8
                }
                ExponentField::Delta(code) => {
                    let (mag, neg) = split_field(exp_field, code);
                    let reference = match cfg.variant {
                        Variant::DeltaBase => bases[c],
                        Variant::FixedBias => cfg.bias,
                    };
                    apply_delta(reference, mag, neg).ok_or_else(|| {
                        Error::corrupt(r.position() / 8, "exponent delta leaves [0, 255]")
                    })?
                }
            };
            let mantissa = if mw == 0 { 0 } else { mantissa << (m - mw) };
            out[row_idx * GROUP_COLS + c] = recompose(
                FloatTriple {
                    sign,
                    exponent,
                    mantissa,
                },
                fmt,
            )?;
        }
    }
    Ok(out)
}

/// Size of the JS zero-skipping baseline: one flag bit per value plus a full
/// value for every non-zero. Both signed zeros count as zero.
pub fn js_encode_bits(values: &[u32], format: FloatFormat) -> u64 {
    let magnitude_mask = format.pattern_mask() >> 1;
    let nonzero = values.iter().filter(|&&v| v & magnitude_mask != 0).count() as u64;
    values.len() as u64 + nonzero * format.width() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floatcore::quantize_bits;

    fn header_for(block: &PackedBlock, cfg: &PackConfig) -> ContainerHeader {
        ContainerHeader::new(cfg, block, &[block.value_count])
    }

    fn round_trip(values: &[u32], cfg: &PackConfig) -> Vec<u32> {
        let block = compress(values, cfg).unwrap();
        decompress(&block, &header_for(&block, cfg)).unwrap()
    }

    #[test]
    fn fp32_ones_full_width() {
        let values = vec![1.0f32.to_bits(); 64];
        let cfg = PackConfig::lossless(FloatFormat::Fp32);
        let block = compress(&values, &cfg).unwrap();
        assert_eq!(block.data_bits(), 8 * 32 + 7 * 8 * 24);
        assert_eq!(block.data_bits(), 1600);
        assert_eq!(block.meta_bits, 21);
        // 200 bits per lane flush to 7 words of 32.
        assert_eq!(block.data.len(), 7 * 4 * 8);
        assert_eq!(decompress(&block, &header_for(&block, &cfg)).unwrap(), values);
    }

    #[test]
    fn bf16_ones_signless_zero_mantissa() {
        let values = vec![FloatFormat::Bf16.encode_f32(1.0); 64];
        let cfg = PackConfig::lossless(FloatFormat::Bf16)
            .with_man_width(0)
            .with_signless(true);
        let size = predict_size(&values, &cfg).unwrap();
        assert_eq!(size.data_bits(), 64);
        assert_eq!(size.meta_bits, 21);
        let block = compress(&values, &cfg).unwrap();
        assert_eq!(block.data_bits(), 64);
        assert_eq!(round_trip(&values, &cfg), values);
    }

    #[test]
    fn truncated_mantissas_are_reinserted_as_zero() {
        let values: Vec<u32> = (0..300u32).map(|i| 0x3F80 + (i * 37) % 0x7F).collect();
        let cfg = PackConfig::lossless(FloatFormat::Bf16).with_man_width(4);
        let out = round_trip(&values, &cfg);
        for (o, v) in out.iter().zip(&values) {
            assert_eq!(o & 0b111, 0);
            assert_eq!(*o, quantize_bits(*v, 4, FloatFormat::Bf16, NonFinitePolicy::Reject).unwrap());
        }
    }

    #[test]
    fn signless_rejects_negative() {
        let values = vec![1.0f32.to_bits(), (-2.0f32).to_bits()];
        let cfg = PackConfig::lossless(FloatFormat::Fp32).with_signless(true);
        assert_eq!(
            compress(&values, &cfg).unwrap_err(),
            Error::NegativeInSignless {
                index: 1,
                bits: (-2.0f32).to_bits()
            }
        );
    }

    #[test]
    fn non_finite_policy() {
        let values = vec![1.0f32.to_bits(), f32::INFINITY.to_bits(), 0x7FC0_0000];
        let cfg = PackConfig::lossless(FloatFormat::Fp32);
        assert!(matches!(compress(&values, &cfg), Err(Error::NonFinite { .. })));
        let cfg = cfg.with_non_finite(NonFinitePolicy::Bypass);
        assert_eq!(round_trip(&values, &cfg), values);
        // A quiet NaN keeps its top mantissa bit at width >= 1 ...
        assert_eq!(round_trip(&values, &cfg.with_man_width(1))[2], 0x7FC0_0000);
        // ... but a NaN whose surviving bits are all zero is refused.
        let low_nan = vec![0x7F80_0001];
        assert!(compress(&low_nan, &cfg.with_man_width(5)).is_err());
    }

    #[test]
    fn fixed_bias_round_trip() {
        let values: Vec<u32> = (0..1000u32)
            .map(|i| ((i as f32) * 0.37 - 100.0).to_bits())
            .collect();
        let cfg = PackConfig::lossless(FloatFormat::Fp32).with_variant(Variant::FixedBias);
        let block = compress(&values, &cfg).unwrap();
        assert_eq!(block.meta_bits, 16 * 8 * 3);
        assert_eq!(decompress(&block, &header_for(&block, &cfg)).unwrap(), values);
    }

    #[test]
    fn empty_tensor() {
        let cfg = PackConfig::lossless(FloatFormat::Fp32);
        let block = compress(&[], &cfg).unwrap();
        assert_eq!(block.group_count, 0);
        assert!(block.data.is_empty());
        assert!(round_trip(&[], &cfg).is_empty());
    }

    #[test]
    fn corrupted_streams_are_rejected() {
        let values: Vec<u32> = (0..200u32).map(|i| (i as f32 * 1.5).to_bits()).collect();
        let cfg = PackConfig::lossless(FloatFormat::Fp32);
        let block = compress(&values, &cfg).unwrap();
        let header = header_for(&block, &cfg);

        let mut bad = block.clone();
        bad.meta.pop();
        assert!(matches!(decompress(&bad, &header), Err(Error::Corrupt { .. })));

        let mut bad = block.clone();
        bad.data.truncate(bad.data.len() - 4);
        assert!(matches!(decompress(&bad, &header), Err(Error::Corrupt { .. })));

        // Bumping a width code changes the lane budget the header promised.
        let mut bad = block.clone();
        bad.meta[0] ^= 0b001;
        assert!(decompress(&bad, &header).is_err());
    }

    #[test]
    fn js_baseline() {
        let f = FloatFormat::Bf16;
        assert_eq!(js_encode_bits(&vec![0; 64], f), 64);
        assert_eq!(js_encode_bits(&vec![0x3F80; 64], f), 64 + 1024);
        let mut v = vec![0x3F80u32; 1000];
        for x in v.iter_mut().take(300) {
            *x = 0x8000; // -0.0
        }
        assert_eq!(js_encode_bits(&v, f), 12_200);
    }

    #[test]
    fn output_independent_of_thread_count() {
        let values: Vec<u32> = (0..5000u32)
            .map(|i| ((i as f32).sin() * 3.0).to_bits())
            .collect();
        let cfg = PackConfig::lossless(FloatFormat::Fp32).with_man_width(9);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| compress(&values, &cfg).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| compress(&values, &cfg).unwrap());
        assert_eq!(one, many);
    }
}
