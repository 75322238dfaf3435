//! LSB-first bit streams.
//!
//! Bit `k` of the stream lives in byte `k / 8` at bit position `k % 8`.
//! Multi-bit fields are written least significant bit first.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_bits(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    /// Number of bits written so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends the low `width` bits of `value` (`width <= 64`).
    pub fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        if width == 0 {
            return;
        }
        let value = if width == 64 { value } else { value & ((1u64 << width) - 1) };
        let mut remaining = width;
        let mut v = value;
        while remaining > 0 {
            let bit_off = (self.len % 8) as u32;
            if bit_off == 0 {
                self.bytes.push(0);
            }
            let take = remaining.min(8 - bit_off);
            let chunk = (v & ((1u64 << take) - 1)) as u8;
            *self.bytes.last_mut().unwrap() |= chunk << bit_off;
            v >>= take;
            remaining -= take;
            self.len += take as usize;
        }
    }

    pub fn write_bit(&mut self, bit: bool) {
        self.write(bit as u64, 1);
    }

    /// Appends every bit of another stream.
    pub fn append(&mut self, other: &BitWriter) {
        if self.len % 8 == 0 {
            self.bytes.extend_from_slice(&other.bytes);
            self.len += other.len;
            return;
        }
        let mut reader = BitReader::new(&other.bytes, other.len);
        let mut left = other.len;
        while left > 0 {
            let take = left.min(64) as u32;
            let v = reader.read(take).expect("in-bounds read");
            self.write(v, take);
            left -= take as usize;
        }
    }

    /// Zero-pads to a multiple of `multiple` bits.
    pub fn pad_to(&mut self, multiple: usize) {
        let rem = self.len % multiple;
        if rem != 0 {
            let mut pad = multiple - rem;
            while pad > 0 {
                let take = pad.min(64);
                self.write(0, take as u32);
                pad -= take;
            }
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    len: usize,
    pos: usize,
}

impl<'a> BitReader<'a> {
    /// Reads at most `len` bits from `bytes`.
    pub fn new(bytes: &'a [u8], len: usize) -> Self {
        debug_assert!(len <= bytes.len() * 8);
        Self { bytes, len, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.len - self.pos
    }

    pub fn read(&mut self, width: u32) -> Result<u64> {
        debug_assert!(width <= 64);
        if width as usize > self.remaining() {
            return Err(Error::corrupt(
                self.pos / 8,
                format!("needed {width} bits, {} left", self.remaining()),
            ));
        }
        let mut out = 0u64;
        let mut got = 0u32;
        while got < width {
            let byte = self.bytes[self.pos / 8];
            let bit_off = (self.pos % 8) as u32;
            let take = (width - got).min(8 - bit_off);
            let chunk = ((byte >> bit_off) as u64) & ((1u64 << take) - 1);
            out |= chunk << got;
            got += take;
            self.pos += take as usize;
        }
        Ok(out)
    }

    /// Advances over `bits` bits.
    pub fn skip(&mut self, bits: usize) -> Result<()> {
        if bits > self.remaining() {
            return Err(Error::corrupt(
                self.pos / 8,
                format!("cannot skip {bits} bits, {} left", self.remaining()),
            ));
        }
        self.pos += bits;
        Ok(())
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        Ok(self.read(1)? == 1)
    }
}
