//! Byte-oriented range coder with carry propagation.
//!
//! State is a 64-bit `low` (33 significant bits) and a 32-bit `range`,
//! renormalized a byte at a time whenever `range < 2^24`. Intervals come from
//! 16-bit cumulative tables, so `range >> 16` is the per-unit width.

use crate::entropy::tables::{CdfTable, PRECISION_BITS, TOTAL};
use crate::error::{CodecError, Result};

const TOP: u32 = 1 << 24;
/// Bytes emitted by [`RangeEncoder::finish`] beyond the renormalization output.
pub const FLUSH_BYTES: usize = 5;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    symbols: usize,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
            symbols: 0,
        }
    }

    pub fn encode(&mut self, symbol: i32, table: &CdfTable) -> Result<()> {
        let (start, freq) = table.interval(symbol)?;
        let r = self.range >> PRECISION_BITS;
        self.low += u64::from(start) * u64::from(r);
        self.range = if start + freq == TOTAL {
            // The top symbol absorbs the truncation remainder.
            self.range - r * start
        } else {
            r * freq
        };
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        self.symbols += 1;
        Ok(())
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Flushes the state. An encoder that saw no symbols yields no bytes.
    pub fn finish(mut self) -> Vec<u8> {
        if self.symbols == 0 {
            return Vec::new();
        }
        for _ in 0..FLUSH_BYTES {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Self { bytes, pos: 0, code: 0, range: u32::MAX };
        if bytes.is_empty() {
            return Ok(d);
        }
        if d.next_byte()? != 0 {
            return Err(CodecError::Corrupt("range coder stream must start with 0".into()));
        }
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.bytes.get(self.pos).ok_or(CodecError::Truncated("range coder input"))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<i32> {
        if self.bytes.is_empty() {
            return Err(CodecError::Truncated("range coder input"));
        }
        let r = self.range >> PRECISION_BITS;
        let target = (self.code / r).min(TOTAL - 1);
        let (symbol, start, freq) = table.lookup(target);
        self.code -= r * start;
        self.range = if start + freq == TOTAL {
            self.range - r * start
        } else {
            r * freq
        };
        if self.code >= self.range {
            return Err(CodecError::Corrupt("code outside decoded interval".into()));
        }
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        Ok(symbol)
    }

    /// Requires that every input byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(CodecError::Corrupt(format!(
                "{} trailing bytes after decoding",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Codes `symbols[i]` with `tables[context(i)]`.
pub fn encode_with<F>(symbols: &[i32], tables: &[CdfTable], context: F) -> Result<Vec<u8>>
where
    F: Fn(usize) -> usize,
{
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        enc.encode(s, &tables[context(i)])?;
    }
    Ok(enc.finish())
}

/// Inverse of [`encode_with`]; fails unless exactly `count` symbols account
/// for every byte.
pub fn decode_with<F>(bytes: &[u8], tables: &[CdfTable], count: usize, context: F) -> Result<Vec<i32>>
where
    F: Fn(usize) -> usize,
{
    if count == 0 {
        return if bytes.is_empty() {
            Ok(Vec::new())
        } else {
            Err(CodecError::Corrupt("bytes present for zero symbols".into()))
        };
    }
    let mut dec = RangeDecoder::new(bytes)?;
    let out = (0..count)
        .map(|i| dec.decode(&tables[context(i)]))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

/// All symbols share one table.
pub fn range_encode(symbols: &[i32], table: &CdfTable) -> Result<Vec<u8>> {
    encode_with(symbols, std::slice::from_ref(table), |_| 0)
}

pub fn range_decode(bytes: &[u8], table: &CdfTable, count: usize) -> Result<Vec<i32>> {
    decode_with(bytes, std::slice::from_ref(table), count, |_| 0)
}

/// `sum -log2(freq / 2^16)` over the symbols.
pub fn ideal_bits(symbols: &[i32], table: &CdfTable) -> Result<f64> {
    symbols.iter().try_fold(0.0, |acc, &s| {
        let (_, f) = table.interval(s)?;
        Ok(acc - (f64::from(f) / f64::from(TOTAL)).log2())
    })
}
