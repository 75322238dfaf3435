//! Bit-level view of FP32 and BF16 values and mantissa truncation.
//!
//! Both formats share an 8-bit exponent with bias 127; they differ only in
//! the number of stored mantissa bits. All functions here work on raw bit
//! patterns carried in a `u32` (BF16 patterns occupy the low 16 bits).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EXPONENT_BITS: u32 = 8;
pub const EXPONENT_BIAS: i32 = 127;
pub const EXPONENT_ALL_ONES: u8 = 0xFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatFormat {
    Fp32,
    Bf16,
}

impl FloatFormat {
    /// Stored mantissa bits `m`.
    pub const fn mantissa_bits(self) -> u32 {
        match self {
            FloatFormat::Fp32 => 23,
            FloatFormat::Bf16 => 7,
        }
    }

    pub const fn exponent_bits(self) -> u32 {
        EXPONENT_BITS
    }

    pub const fn bias(self) -> i32 {
        EXPONENT_BIAS
    }

    /// Total width of one value in bits.
    pub const fn width(self) -> u32 {
        match self {
            FloatFormat::Fp32 => 32,
            FloatFormat::Bf16 => 16,
        }
    }

    pub const fn mantissa_mask(self) -> u32 {
        (1u32 << self.mantissa_bits()) - 1
    }

    pub const fn pattern_mask(self) -> u32 {
        match self {
            FloatFormat::Fp32 => u32::MAX,
            FloatFormat::Bf16 => 0xFFFF,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            FloatFormat::Fp32 => 0,
            FloatFormat::Bf16 => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FloatFormat::Fp32),
            1 => Some(FloatFormat::Bf16),
            _ => None,
        }
    }

    /// Rounds an `f32` into this format's bit pattern (round-to-nearest-even
    /// for BF16).
    pub fn encode_f32(self, x: f32) -> u32 {
        match self {
            FloatFormat::Fp32 => x.to_bits(),
            FloatFormat::Bf16 => half::bf16::from_f32(x).to_bits() as u32,
        }
    }

    /// Widens a bit pattern of this format to `f32` exactly.
    pub fn decode_f32(self, bits: u32) -> f32 {
        match self {
            FloatFormat::Fp32 => f32::from_bits(bits),
            FloatFormat::Bf16 => f32::from_bits((bits & 0xFFFF) << 16),
        }
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FloatFormat::Fp32 => "fp32",
            FloatFormat::Bf16 => "bf16",
        })
    }
}

impl FromStr for FloatFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" | "f32" => Ok(FloatFormat::Fp32),
            "bf16" | "bfloat16" => Ok(FloatFormat::Bf16),
            other => Err(Error::config(format!("unknown float format `{other}`"))),
        }
    }
}

/// Sign, biased exponent and stored mantissa of one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FloatTriple {
    pub sign: bool,
    pub exponent: u8,
    pub mantissa: u32,
}

impl FloatTriple {
    pub fn is_non_finite(&self) -> bool {
        self.exponent == EXPONENT_ALL_ONES
    }
}

/// Splits a bit pattern into its fields. NaN payloads are kept as-is.
pub fn decompose(bits: u32, fmt: FloatFormat) -> FloatTriple {
    let bits = bits & fmt.pattern_mask();
    let m = fmt.mantissa_bits();
    FloatTriple {
        sign: (bits >> (fmt.width() - 1)) & 1 == 1,
        exponent: ((bits >> m) & 0xFF) as u8,
        mantissa: bits & fmt.mantissa_mask(),
    }
}

/// Inverse of [`decompose`].
pub fn recompose(t: FloatTriple, fmt: FloatFormat) -> Result<u32> {
    if t.mantissa > fmt.mantissa_mask() {
        return Err(Error::contract(format!(
            "mantissa {:#x} does not fit in {} bits",
            t.mantissa,
            fmt.mantissa_bits()
        )));
    }
    let m = fmt.mantissa_bits();
    Ok(((t.sign as u32) << (fmt.width() - 1)) | ((t.exponent as u32) << m) | t.mantissa)
}

/// Keeps the top `n` of the format's `m` mantissa bits and zeroes the rest:
/// `M & ((2^n - 1) << (m - n))`.
pub fn quantize_mantissa(mantissa: u32, n: u32, fmt: FloatFormat) -> Result<u32> {
    let m = fmt.mantissa_bits();
    if n > m {
        return Err(Error::contract(format!("bitlength {n} exceeds {m} mantissa bits")));
    }
    if mantissa > fmt.mantissa_mask() {
        return Err(Error::contract(format!("mantissa {mantissa:#x} out of range for {fmt}")));
    }
    Ok(mantissa & keep_mask(n, m))
}

#[inline]
pub(crate) fn keep_mask(n: u32, m: u32) -> u32 {
    debug_assert!(n <= m);
    (((1u64 << n) - 1) << (m - n)) as u32
}

/// What quantizers do with values whose exponent is all ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonFinitePolicy {
    /// Refuse with [`Error::NonFinite`]. Truncating a NaN payload to zero
    /// would silently turn it into an infinity.
    #[default]
    Reject,
    /// Pass the value through at full mantissa width.
    Bypass,
}

/// Truncates the mantissa of a whole value pattern to `n` bits.
pub fn quantize_bits(bits: u32, n: u32, fmt: FloatFormat, policy: NonFinitePolicy) -> Result<u32> {
    let t = decompose(bits, fmt);
    if t.is_non_finite() {
        return match policy {
            NonFinitePolicy::Reject => Err(Error::NonFinite { bits }),
            NonFinitePolicy::Bypass => Ok(bits & fmt.pattern_mask()),
        };
    }
    recompose(
        FloatTriple {
            mantissa: quantize_mantissa(t.mantissa, n, fmt)?,
            ..t
        },
        fmt,
    )
}

/// Picks the integer width for a real bitlength `n`: `floor(n) + 1` with
/// probability `frac(n)`, else `floor(n)`. `n` above `m` is clipped to `m`.
/// Exactly one uniform draw is consumed per call so stream positions do not
/// depend on `n`.
pub fn draw_width<R: Rng + ?Sized>(n: f64, fmt: FloatFormat, rng: &mut R) -> Result<u32> {
    if !(n >= 0.0) {
        return Err(Error::contract(format!("bitlength {n} must be clipped to >= 0 first")));
    }
    let m = fmt.mantissa_bits();
    let n = n.min(m as f64);
    let floor = n.floor();
    let frac = n - floor;
    let u: f64 = rng.gen();
    let lo = floor as u32;
    Ok(if u < frac { (lo + 1).min(m) } else { lo })
}

/// Stochastic mantissa quantization for a real bitlength.
pub fn quantize_stochastic<R: Rng + ?Sized>(
    mantissa: u32,
    n: f64,
    fmt: FloatFormat,
    rng: &mut R,
) -> Result<u32> {
    let width = draw_width(n, fmt, rng)?;
    quantize_mantissa(mantissa, width, fmt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn decompose_known_patterns() {
        let one = decompose(0x3F80_0000, FloatFormat::Fp32);
        assert_eq!(one, FloatTriple { sign: false, exponent: 127, mantissa: 0 });
        let pi = decompose(0x4049_0FDB, FloatFormat::Fp32);
        assert_eq!(pi, FloatTriple { sign: false, exponent: 128, mantissa: 0x49_0FDB });
        let x = decompose(0x3FC0, FloatFormat::Bf16);
        assert_eq!(x, FloatTriple { sign: false, exponent: 127, mantissa: 0x40 });
    }

    #[test]
    fn recompose_known_patterns() {
        let t = |sign, exponent, mantissa| FloatTriple { sign, exponent, mantissa };
        assert_eq!(recompose(t(false, 127, 0), FloatFormat::Fp32).unwrap(), 0x3F80_0000);
        assert_eq!(recompose(t(true, 128, 0x20_0000), FloatFormat::Fp32).unwrap(), 0xC020_0000);
        assert_eq!(f32::from_bits(0xC020_0000), -2.5);
        assert_eq!(recompose(t(false, 0, 0), FloatFormat::Bf16).unwrap(), 0);
        assert!(recompose(t(false, 1, 0x80), FloatFormat::Bf16).is_err());
    }

    #[test]
    fn bf16_exhaustive_round_trip() {
        for bits in 0..=0xFFFFu32 {
            let t = decompose(bits, FloatFormat::Bf16);
            assert_eq!(recompose(t, FloatFormat::Bf16).unwrap(), bits);
        }
    }

    #[test]
    fn quantize_examples() {
        let bf = FloatFormat::Bf16;
        assert_eq!(quantize_mantissa(0b101_1011, 3, bf).unwrap(), 0b101_0000);
        assert_eq!(quantize_mantissa(0b101_1011, 0, bf).unwrap(), 0);
        assert_eq!(quantize_mantissa(0x7F_FFFF, 23, FloatFormat::Fp32).unwrap(), 0x7F_FFFF);
        assert!(quantize_mantissa(1, 8, bf).is_err());
        assert!(quantize_mantissa(0x80, 3, bf).is_err());
    }

    #[test]
    fn integer_and_zero_bitlengths_are_deterministic() {
        let mut r = rng::stream(1, 0);
        for _ in 0..100 {
            assert_eq!(
                quantize_stochastic(0b101_1011, 3.0, FloatFormat::Bf16, &mut r).unwrap(),
                0b101_0000
            );
            assert_eq!(quantize_stochastic(0b101_1011, 0.0, FloatFormat::Bf16, &mut r).unwrap(), 0);
        }
        assert!(quantize_stochastic(1, -0.1, FloatFormat::Bf16, &mut r).is_err());
        assert!(quantize_stochastic(1, f64::NAN, FloatFormat::Bf16, &mut r).is_err());
    }

    #[test]
    fn bitlength_above_m_is_clipped() {
        let mut r = rng::stream(1, 0);
        assert_eq!(draw_width(9.7, FloatFormat::Bf16, &mut r).unwrap(), 7);
        assert!(draw_width(6.999, FloatFormat::Bf16, &mut r).unwrap() <= 7);
    }

    #[test]
    fn non_finite_policy() {
        let nan = 0x7FC0_0001u32;
        assert_eq!(
            quantize_bits(nan, 0, FloatFormat::Fp32, NonFinitePolicy::Reject),
            Err(Error::NonFinite { bits: nan })
        );
        assert_eq!(quantize_bits(nan, 0, FloatFormat::Fp32, NonFinitePolicy::Bypass).unwrap(), nan);
        // Subnormals are masked like any other mantissa.
        assert_eq!(
            quantize_bits(0x0000_00FF, 20, FloatFormat::Fp32, NonFinitePolicy::Reject).unwrap(),
            0x0000_00F8
        );
    }

    #[test]
    fn bf16_conversions() {
        let f = FloatFormat::Bf16;
        assert_eq!(f.encode_f32(1.5), 0x3FC0);
        assert_eq!(f.decode_f32(0x3FC0), 1.5);
        assert_eq!("BF16".parse::<FloatFormat>().unwrap(), f);
        assert!("fp16".parse::<FloatFormat>().is_err());
    }
}
