//! Packing of signed b-bit integer codes into bytes.
//!
//! Codes are stored offset-binary: `u = q + 2^(b-1)`. For b in {2, 4, 8} the
//! `u` values fill each byte LSB-first (4, 2 or 1 codes per byte). For b = 3,
//! every group of 8 codes occupies 3 bytes: code `i` of a group sits at bits
//! `[3i, 3i+3)` of the little-endian 24-bit group. Trailing bits of the last
//! byte or group are zero.

use std::fmt;

use crate::error::{Error, Result};

/// Supported code widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bits(u8);

impl Bits {
    pub const B2: Bits = Bits(2);
    pub const B3: Bits = Bits(3);
    pub const B4: Bits = Bits(4);
    pub const B8: Bits = Bits(8);
    pub const ALL: [Bits; 4] = [Bits::B2, Bits::B3, Bits::B4, Bits::B8];

    pub fn new(bits: u32) -> Result<Self> {
        match bits {
            2 | 3 | 4 | 8 => Ok(Bits(bits as u8)),
            other => Err(Error::UnsupportedBits(other)),
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Smallest code, `-2^(b-1)`.
    pub fn min_code(self) -> i32 {
        -(1 << (self.0 - 1))
    }

    /// Largest code, `2^(b-1) - 1`.
    pub fn max_code(self) -> i32 {
        (1 << (self.0 - 1)) - 1
    }

    fn offset(self) -> i32 {
        1 << (self.0 - 1)
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Signed codes of a single width, each within the two's-complement range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeArray {
    bits: Bits,
    codes: Vec<i8>,
}

impl CodeArray {
    pub fn new(bits: Bits, codes: Vec<i8>) -> Result<Self> {
        if let Some(&bad) = codes
            .iter()
            .find(|&&c| (c as i32) < bits.min_code() || (c as i32) > bits.max_code())
        {
            return Err(Error::CodeOutOfRange {
                code: bad as i32,
                bits: bits.get(),
            });
        }
        Ok(Self { bits, codes })
    }

    pub fn bits(&self) -> Bits {
        self.bits
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn into_codes(self) -> Vec<i8> {
        self.codes
    }
}

/// Byte length of `count` packed codes.
pub fn packed_len(bits: Bits, count: usize) -> usize {
    match bits.get() {
        3 => 3 * count.div_ceil(8),
        b => (count * b as usize).div_ceil(8),
    }
}

pub fn pack(codes: &CodeArray) -> Vec<u8> {
    let bits = codes.bits;
    let mut out = vec![0u8; packed_len(bits, codes.len())];
    for (i, &q) in codes.codes.iter().enumerate() {
        put(&mut out, bits, i, (q as i32 + bits.offset()) as u8);
    }
    out
}

pub fn unpack(data: &[u8], bits: Bits, count: usize) -> Result<CodeArray> {
    let expected = packed_len(bits, count);
    if data.len() != expected {
        return Err(Error::PackedLength {
            expected,
            actual: data.len(),
            count,
        });
    }
    let mut codes = vec![0i8; count];
    unpack_range(data, bits, 0, &mut codes);
    Ok(CodeArray { bits, codes })
}

/// Decodes `out.len()` codes starting at code index `start`.
///
/// Panics if the range lies outside `data`.
pub fn unpack_range(data: &[u8], bits: Bits, start: usize, out: &mut [i8]) {
    let off = bits.offset();
    match bits.get() {
        8 => {
            let n = out.len();
            for (o, &b) in out.iter_mut().zip(&data[start..start + n]) {
                *o = (b as i32 - off) as i8;
            }
        }
        _ => {
            for (k, o) in out.iter_mut().enumerate() {
                *o = (get(data, bits, start + k) as i32 - off) as i8;
            }
        }
    }
}

/// Offset-binary field of code `index`.
#[inline]
fn get(data: &[u8], bits: Bits, index: usize) -> u8 {
    match bits.get() {
        3 => {
            let g = index / 8 * 3;
            let word = data[g] as u32 | (data[g + 1] as u32) << 8 | (data[g + 2] as u32) << 16;
            ((word >> (3 * (index % 8))) & 0x7) as u8
        }
        b => {
            let per_byte = 8 / b as usize;
            let shift = (index % per_byte) * b as usize;
            (data[index / per_byte] >> shift) & ((1u16 << b) - 1) as u8
        }
    }
}

#[inline]
fn put(data: &mut [u8], bits: Bits, index: usize, u: u8) {
    match bits.get() {
        3 => {
            let g = index / 8 * 3;
            let word = (u as u32) << (3 * (index % 8));
            data[g] |= word as u8;
            data[g + 1] |= (word >> 8) as u8;
            data[g + 2] |= (word >> 16) as u8;
        }
        b => {
            let per_byte = 8 / b as usize;
            let shift = (index % per_byte) * b as usize;
            data[index / per_byte] |= u << shift;
        }
    }
}
