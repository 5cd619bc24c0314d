//! Signed integer coding.
//!
//! Integers are folded onto the naturals with the zigzag map
//! (`m ≥ 0 → 2m`, `m < 0 → 2|m| − 1`) and written as the Elias-gamma code of
//! `zigzag(m) + 1`, so the null message `0` costs a single `1` bit. Bits are
//! packed most-significant-bit first within each byte.
//!
//! Two costs are tracked for every integer: the length of that real prefix
//! code, and the ideal length `log2(2|m| + 1)` used by all reported metrics.

use std::fmt;

use crate::error::CodecError;

/// Largest magnitude a message component may take.
pub const MAX_MAGNITUDE: i64 = (1 << 31) - 1;

/// A growable, MSB-first packed bit sequence.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps packed bytes holding `len` meaningful bits. Bits past `len` are
    /// cleared.
    pub fn from_bytes(mut bytes: Vec<u8>, len: usize) -> Self {
        assert!(len <= bytes.len() * 8, "bit length exceeds buffer");
        bytes.truncate(len.div_ceil(8));
        if !len.is_multiple_of(8) {
            let last = bytes.len() - 1;
            bytes[last] &= 0xFFu8 << (8 - len % 8);
        }
        Self { bytes, len }
    }

    /// Parses a string of `0`/`1` characters; whitespace is ignored.
    pub fn parse(text: &str) -> Option<Self> {
        let mut bits = Self::new();
        for c in text.chars() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                c if c.is_whitespace() => {}
                _ => return None,
            }
        }
        Some(bits)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        for i in (0..width).rev() {
            self.push((value >> i) & 1 == 1);
        }
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        (index < self.len).then(|| self.bytes[index / 8] & (0x80 >> (index % 8)) != 0)
    }

    pub fn extend(&mut self, other: &BitString) {
        for i in 0..other.len {
            self.push(other.get(i).unwrap_or(false));
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) == Some(true) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(\"{self}\")")
    }
}

fn check_range(m: i64) -> Result<(), CodecError> {
    if (-MAX_MAGNITUDE..=MAX_MAGNITUDE).contains(&m) {
        Ok(())
    } else {
        Err(CodecError::Overflow(m))
    }
}

/// Folds a signed integer onto the naturals: `2|m|` for `m ≥ 0`, else `2|m| − 1`.
pub fn zigzag(m: i64) -> Result<u64, CodecError> {
    check_range(m)?;
    let mag = m.unsigned_abs();
    Ok(if m >= 0 { 2 * mag } else { 2 * mag - 1 })
}

/// Inverse of [`zigzag`]. Total on `u64`; callers bound the input range.
pub fn unzigzag(k: u64) -> i64 {
    let half = (k >> 1) as i64;
    if k & 1 == 0 {
        half
    } else {
        -half - 1
    }
}

/// Length in bits of the Elias-gamma code for `n ≥ 1`.
fn gamma_len(n: u64) -> u32 {
    2 * (63 - n.leading_zeros()) + 1
}

/// Codeword length of `m` without materializing it.
pub fn encoded_len(m: i64) -> Result<u32, CodecError> {
    Ok(gamma_len(zigzag(m)? + 1))
}

/// Appends the codeword for `m` to `out`.
pub fn encode_into(m: i64, out: &mut BitString) -> Result<(), CodecError> {
    let n = zigzag(m)? + 1;
    let width = 64 - n.leading_zeros();
    out.push_bits(0, width - 1);
    out.push_bits(n, width);
    Ok(())
}

/// Elias-gamma codeword of `zigzag(m) + 1`.
pub fn encode_int(m: i64) -> Result<BitString, CodecError> {
    let mut out = BitString::new();
    encode_into(m, &mut out)?;
    Ok(out)
}

/// Decodes one codeword starting at bit `cursor`; returns the integer and
/// the cursor just past the codeword.
pub fn decode_int(bits: &BitString, cursor: usize) -> Result<(i64, usize), CodecError> {
    let truncated = CodecError::Truncated { offset: cursor };
    let mut pos = cursor;
    let mut zeros = 0u32;
    loop {
        match bits.get(pos) {
            None => return Err(truncated),
            Some(true) => break,
            Some(false) => {
                zeros += 1;
                pos += 1;
                // zigzag of ±(2^31 − 1) plus one stays below 2^32.
                if zeros > 31 {
                    return Err(CodecError::InvalidCodeword { offset: cursor });
                }
            }
        }
    }
    let mut n = 0u64;
    for _ in 0..=zeros {
        let bit = bits.get(pos).ok_or(truncated.clone())?;
        n = (n << 1) | u64::from(bit);
        pos += 1;
    }
    let m = unzigzag(n - 1);
    if check_range(m).is_err() {
        return Err(CodecError::InvalidCodeword { offset: cursor });
    }
    Ok((m, pos))
}

/// Encodes a sequence as concatenated codewords.
pub fn encode_all(ints: &[i64]) -> Result<BitString, CodecError> {
    let mut out = BitString::new();
    for &m in ints {
        encode_into(m, &mut out)?;
    }
    Ok(out)
}

/// Decodes exactly `count` codewords from the start of `bits`; returns the
/// integers and the number of bits consumed.
pub fn decode_all(bits: &BitString, count: usize) -> Result<(Vec<i64>, usize), CodecError> {
    let mut cursor = 0;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (m, next) = decode_int(bits, cursor)?;
        out.push(m);
        cursor = next;
    }
    Ok((out, cursor))
}

/// Ideal cost `log2(2|m| + 1)` in bits; zero for the null message.
pub fn ideal_bit_length(m: i64) -> f64 {
    (2.0 * m.unsigned_abs() as f64 + 1.0).log2()
}
