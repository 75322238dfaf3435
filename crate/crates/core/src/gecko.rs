//! Lossless variable-length exponent coding.
//!
//! Two variants are supported:
//!
//! * **Delta-base** works on groups of 64 exponents viewed as an 8x8
//!   row-major matrix. Row 0 holds one 8-bit base per column; rows 1..7 are
//!   stored as sign-magnitude deltas from their column base, and each of
//!   those rows carries a 3-bit width code sized for its largest magnitude.
//! * **Fixed-bias** stores each exponent of a group of 8 as the sign-magnitude
//!   difference from a programmed bias (127 by default) under a single 3-bit
//!   width code.
//!
//! A delta field of width `w > 0` is `w` magnitude bits followed by one sign
//! bit (1 = negative), written LSB-first. Width-0 rows store nothing.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bitio::{BitReader, BitWriter};
use crate::error::{Error, Result};

pub const GROUP_ROWS: usize = 8;
pub const GROUP_COLS: usize = 8;
pub const GROUP_VALUES: usize = GROUP_ROWS * GROUP_COLS;
pub const FIXED_BIAS_GROUP: usize = 8;
pub const DEFAULT_BIAS: u8 = 127;
pub const WIDTH_CODE_BITS: u32 = 3;
pub const BASE_BITS: u32 = 8;

/// A 3-bit code naming a delta magnitude width.
///
/// Codes 0..=6 mean widths 0..=6 and code 7 means 8 bits. Width 7 is never
/// needed on its own, so magnitudes in 64..=127 are promoted to 8 bits; this
/// keeps every 8-bit exponent difference (up to 255) representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct WidthCode(u8);

impl WidthCode {
    pub const WIDTHS: [u32; 8] = [0, 1, 2, 3, 4, 5, 6, 8];
    pub const ZERO: WidthCode = WidthCode(0);

    /// Smallest code whose width holds `magnitude` (leading-one detection).
    pub fn for_magnitude(magnitude: u8) -> Self {
        let significant = u8::BITS - magnitude.leading_zeros();
        WidthCode(if significant >= 7 { 7 } else { significant as u8 })
    }

    pub fn from_code(code: u8) -> Result<Self> {
        if code < 8 {
            Ok(WidthCode(code))
        } else {
            Err(Error::contract(format!("width code {code} does not fit in 3 bits")))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    /// Magnitude width in bits.
    pub fn width(self) -> u32 {
        Self::WIDTHS[self.0 as usize]
    }

    /// Stored bits per delta: magnitude plus sign, or nothing for width 0.
    pub fn field_bits(self) -> u32 {
        match self.width() {
            0 => 0,
            w => w + 1,
        }
    }
}

/// Sign-magnitude difference `value - reference`.
#[inline]
pub fn sign_magnitude(value: u8, reference: u8) -> (u8, bool) {
    if value >= reference {
        (value - reference, false)
    } else {
        (reference - value, true)
    }
}

/// Inverse of [`sign_magnitude`]; fails if the result leaves `[0, 255]`.
#[inline]
pub fn apply_delta(reference: u8, magnitude: u8, negative: bool) -> Option<u8> {
    if negative {
        reference.checked_sub(magnitude)
    } else {
        reference.checked_add(magnitude)
    }
}

/// Packs a delta into its field value: magnitude in the low `w` bits, sign
/// above it.
#[inline]
pub fn delta_field(magnitude: u8, negative: bool, code: WidthCode) -> u64 {
    let w = code.width();
    debug_assert!(w == 0 || (magnitude as u32) < (1 << w));
    if w == 0 {
        0
    } else {
        magnitude as u64 | ((negative as u64) << w)
    }
}

/// Splits a field value produced by [`delta_field`].
#[inline]
pub fn split_field(field: u64, code: WidthCode) -> (u8, bool) {
    let w = code.width();
    if w == 0 {
        (0, false)
    } else {
        ((field & ((1 << w) - 1)) as u8, (field >> w) & 1 == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    DeltaBase,
    FixedBias,
}

impl Variant {
    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::DeltaBase => 0,
            Variant::FixedBias => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::DeltaBase),
            1 => Some(Variant::FixedBias),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::DeltaBase => "delta-base",
            Variant::FixedBias => "fixed-bias",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta-base" | "delta" => Ok(Variant::DeltaBase),
            "fixed-bias" | "bias" => Ok(Variant::FixedBias),
            other => Err(Error::config(format!("unknown exponent variant `{other}`"))),
        }
    }
}

/// 64 exponents in row-major 8x8 order. Trailing padding is recorded so
/// decoding can drop it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExponentGroup {
    exponents: [u8; GROUP_VALUES],
    pad_count: u8,
}

impl ExponentGroup {
    pub fn new(exponents: [u8; GROUP_VALUES]) -> Self {
        Self {
            exponents,
            pad_count: 0,
        }
    }

    /// Builds a group from 1..=64 leading exponents. Missing slots take
    /// their column base (delta 0); columns with no row-0 value are filled
    /// with [`DEFAULT_BIAS`].
    pub fn from_partial(values: &[u8]) -> Result<Self> {
        if values.is_empty() || values.len() > GROUP_VALUES {
            return Err(Error::contract(format!(
                "a group holds 1..={GROUP_VALUES} exponents, got {}",
                values.len()
            )));
        }
        let mut exponents = [0u8; GROUP_VALUES];
        exponents[..values.len()].copy_from_slice(values);
        for (i, e) in exponents.iter_mut().enumerate().skip(values.len()) {
            let col = i % GROUP_COLS;
            *e = if col < values.len() { values[col] } else { DEFAULT_BIAS };
        }
        Ok(Self {
            exponents,
            pad_count: (GROUP_VALUES - values.len()) as u8,
        })
    }

    pub fn exponents(&self) -> &[u8; GROUP_VALUES] {
        &self.exponents
    }

    /// The non-padding prefix.
    pub fn values(&self) -> &[u8] {
        &self.exponents[..GROUP_VALUES - self.pad_count as usize]
    }

    pub fn pad_count(&self) -> u8 {
        self.pad_count
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.exponents[row * GROUP_COLS + col]
    }

    pub fn row(&self, row: usize) -> [u8; GROUP_COLS] {
        let mut out = [0u8; GROUP_COLS];
        out.copy_from_slice(&self.exponents[row * GROUP_COLS..(row + 1) * GROUP_COLS]);
        out
    }

    pub fn bases(&self) -> [u8; GROUP_COLS] {
        self.row(0)
    }
}

/// Width code for one delta row against the column bases.
pub fn row_width(row: &[u8; GROUP_COLS], bases: &[u8; GROUP_COLS]) -> WidthCode {
    let max = row
        .iter()
        .zip(bases)
        .map(|(&e, &b)| sign_magnitude(e, b).0)
        .max()
        .unwrap_or(0);
    WidthCode::for_magnitude(max)
}

/// Width code for a fixed-bias group.
pub fn bias_width(exponents: &[u8], bias: u8) -> WidthCode {
    let max = exponents.iter().map(|&e| sign_magnitude(e, bias).0).max().unwrap_or(0);
    WidthCode::for_magnitude(max)
}

/// Bit account `(M + C) / O` for encoded exponents.
///
/// `metadata_bits` counts width fields. `payload_bits` counts everything
/// else that is stored, including delta-base column bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RatioAccount {
    pub metadata_bits: u64,
    pub payload_bits: u64,
    pub original_bits: u64,
}

impl RatioAccount {
    pub fn encoded_bits(&self) -> u64 {
        self.metadata_bits + self.payload_bits
    }

    pub fn ratio(&self) -> f64 {
        if self.original_bits == 0 {
            0.0
        } else {
            self.encoded_bits() as f64 / self.original_bits as f64
        }
    }
}

impl Add for RatioAccount {
    type Output = RatioAccount;

    fn add(self, rhs: Self) -> Self {
        RatioAccount {
            metadata_bits: self.metadata_bits + rhs.metadata_bits,
            payload_bits: self.payload_bits + rhs.payload_bits,
            original_bits: self.original_bits + rhs.original_bits,
        }
    }
}

impl AddAssign for RatioAccount {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for RatioAccount {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(RatioAccount::default(), Add::add)
    }
}

/// Encoded size of a delta-base group with the given row codes:
/// `64 + 21 + sum(8 * field_bits)`.
pub fn delta_encoded_bits(widths: &[WidthCode; GROUP_ROWS - 1]) -> u64 {
    let payload: u64 = widths.iter().map(|w| GROUP_COLS as u64 * w.field_bits() as u64).sum();
    (GROUP_COLS as u64 * BASE_BITS as u64) + (GROUP_ROWS as u64 - 1) * WIDTH_CODE_BITS as u64 + payload
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaEncoding {
    pub bases: [u8; GROUP_COLS],
    pub widths: [WidthCode; GROUP_ROWS - 1],
    pub payload: Vec<u8>,
    pub payload_bits: usize,
    pub pad_count: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedBiasEncoding {
    pub bias: u8,
    pub width: WidthCode,
    pub payload: Vec<u8>,
    pub payload_bits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeckoEncoding {
    DeltaBase(DeltaEncoding),
    FixedBias(FixedBiasEncoding),
}

pub fn encode_delta(group: &ExponentGroup) -> DeltaEncoding {
    let bases = group.bases();
    let mut widths = [WidthCode::ZERO; GROUP_ROWS - 1];
    let mut w = BitWriter::new();
    for r in 1..GROUP_ROWS {
        let row = group.row(r);
        let code = row_width(&row, &bases);
        widths[r - 1] = code;
        for (&e, &b) in row.iter().zip(&bases) {
            let (mag, neg) = sign_magnitude(e, b);
            w.write(delta_field(mag, neg, code), code.field_bits());
        }
    }
    DeltaEncoding {
        bases,
        widths,
        payload_bits: w.len(),
        payload: w.into_bytes(),
        pad_count: group.pad_count(),
    }
}

pub fn encode_fixed_bias(exponents: &[u8; FIXED_BIAS_GROUP], bias: u8) -> FixedBiasEncoding {
    let code = bias_width(exponents, bias);
    let mut w = BitWriter::new();
    for &e in exponents {
        let (mag, neg) = sign_magnitude(e, bias);
        w.write(delta_field(mag, neg, code), code.field_bits());
    }
    FixedBiasEncoding {
        bias,
        width: code,
        payload_bits: w.len(),
        payload: w.into_bytes(),
    }
}

fn check_payload(bytes: &[u8], bits: usize, expected: usize) -> Result<()> {
    if bits != expected || bytes.len() != expected.div_ceil(8) {
        return Err(Error::corrupt(
            bytes.len().min(expected.div_ceil(8)),
            format!(
                "payload holds {bits} bits in {} bytes, width codes require {expected}",
                bytes.len()
            ),
        ));
    }
    Ok(())
}

impl DeltaEncoding {
    pub fn encoded_bits(&self) -> u64 {
        delta_encoded_bits(&self.widths)
    }

    pub fn decode(&self) -> Result<ExponentGroup> {
        let expected: usize = self
            .widths
            .iter()
            .map(|w| GROUP_COLS * w.field_bits() as usize)
            .sum();
        check_payload(&self.payload, self.payload_bits, expected)?;
        if self.pad_count as usize >= GROUP_VALUES {
            return Err(Error::corrupt(0, format!("pad count {} leaves no values", self.pad_count)));
        }
        let mut exps = [0u8; GROUP_VALUES];
        exps[..GROUP_COLS].copy_from_slice(&self.bases);
        let mut r = BitReader::new(&self.payload, self.payload_bits);
        for row in 1..GROUP_ROWS {
            let code = self.widths[row - 1];
            for col in 0..GROUP_COLS {
                let field = r.read(code.field_bits())?;
                let (mag, neg) = split_field(field, code);
                exps[row * GROUP_COLS + col] = apply_delta(self.bases[col], mag, neg)
                    .ok_or_else(|| Error::corrupt(r.position() / 8, "delta leaves exponent range"))?;
            }
        }
        Ok(ExponentGroup {
            exponents: exps,
            pad_count: self.pad_count,
        })
    }

    pub fn ratio(&self) -> RatioAccount {
        RatioAccount {
            metadata_bits: (GROUP_ROWS as u64 - 1) * WIDTH_CODE_BITS as u64,
            payload_bits: GROUP_COLS as u64 * BASE_BITS as u64 + self.payload_bits as u64,
            original_bits: GROUP_VALUES as u64 * 8,
        }
    }
}

impl FixedBiasEncoding {
    pub fn encoded_bits(&self) -> u64 {
        WIDTH_CODE_BITS as u64 + self.payload_bits as u64
    }

    pub fn decode(&self) -> Result<[u8; FIXED_BIAS_GROUP]> {
        check_payload(
            &self.payload,
            self.payload_bits,
            FIXED_BIAS_GROUP * self.width.field_bits() as usize,
        )?;
        let mut out = [0u8; FIXED_BIAS_GROUP];
        let mut r = BitReader::new(&self.payload, self.payload_bits);
        for slot in out.iter_mut() {
            let (mag, neg) = split_field(r.read(self.width.field_bits())?, self.width);
            *slot = apply_delta(self.bias, mag, neg)
                .ok_or_else(|| Error::corrupt(r.position() / 8, "delta leaves exponent range"))?;
        }
        Ok(out)
    }

    pub fn ratio(&self) -> RatioAccount {
        RatioAccount {
            metadata_bits: WIDTH_CODE_BITS as u64,
            payload_bits: self.payload_bits as u64,
            original_bits: FIXED_BIAS_GROUP as u64 * 8,
        }
    }
}

impl GeckoEncoding {
    pub fn variant(&self) -> Variant {
        match self {
            GeckoEncoding::DeltaBase(_) => Variant::DeltaBase,
            GeckoEncoding::FixedBias(_) => Variant::FixedBias,
        }
    }

    /// Decoded exponents with padding removed.
    pub fn decode(&self) -> Result<Vec<u8>> {
        match self {
            GeckoEncoding::DeltaBase(d) => Ok(d.decode()?.values().to_vec()),
            GeckoEncoding::FixedBias(f) => Ok(f.decode()?.to_vec()),
        }
    }

    pub fn encoded_bits(&self) -> u64 {
        match self {
            GeckoEncoding::DeltaBase(d) => d.encoded_bits(),
            GeckoEncoding::FixedBias(f) => f.encoded_bits(),
        }
    }

    pub fn ratio(&self) -> RatioAccount {
        match self {
            GeckoEncoding::DeltaBase(d) => d.ratio(),
            GeckoEncoding::FixedBias(f) => f.ratio(),
        }
    }
}

impl From<DeltaEncoding> for GeckoEncoding {
    fn from(d: DeltaEncoding) -> Self {
        GeckoEncoding::DeltaBase(d)
    }
}

impl From<FixedBiasEncoding> for GeckoEncoding {
    fn from(f: FixedBiasEncoding) -> Self {
        GeckoEncoding::FixedBias(f)
    }
}

/// Exponent-only account for a whole exponent sequence, split into groups of
/// 64 (delta-base) or 8 (fixed-bias). `O` counts only real values; padding
/// overhead lands in `M + C`.
pub fn account_exponents(exponents: &[u8], variant: Variant, bias: u8) -> RatioAccount {
    match variant {
        Variant::DeltaBase => exponents
            .chunks(GROUP_VALUES)
            .map(|chunk| {
                let g = ExponentGroup::from_partial(chunk).expect("chunk is 1..=64 long");
                let mut widths = [WidthCode::ZERO; GROUP_ROWS - 1];
                let bases = g.bases();
                for (r, w) in widths.iter_mut().enumerate() {
                    *w = row_width(&g.row(r + 1), &bases);
                }
                let total = delta_encoded_bits(&widths);
                let meta = (GROUP_ROWS as u64 - 1) * WIDTH_CODE_BITS as u64;
                RatioAccount {
                    metadata_bits: meta,
                    payload_bits: total - meta,
                    original_bits: chunk.len() as u64 * 8,
                }
            })
            .sum(),
        Variant::FixedBias => exponents
            .chunks(FIXED_BIAS_GROUP)
            .map(|chunk| {
                let code = bias_width(chunk, bias);
                RatioAccount {
                    metadata_bits: WIDTH_CODE_BITS as u64,
                    payload_bits: FIXED_BIAS_GROUP as u64 * code.field_bits() as u64,
                    original_bits: chunk.len() as u64 * 8,
                }
            })
            .sum(),
    }
}
