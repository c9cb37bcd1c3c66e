//! MSB-first bit packing for entropy-coded data.
//!
//! Both ends work on *unstuffed* bytes; 0xFF/0x00 stuffing is applied and
//! removed by the JFIF layer.

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    nbits: u32,
    total: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the low `len` bits of `bits` (len <= 32).
    pub fn write(&mut self, bits: u32, len: u8) {
        debug_assert!(len <= 32);
        if len == 0 {
            return;
        }
        let mask = if len == 32 { u32::MAX } else { (1u32 << len) - 1 };
        self.acc = (self.acc << len) | (bits & mask) as u64;
        self.nbits += len as u32;
        self.total += len as u64;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.bytes.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    /// Bits written so far, excluding padding.
    pub fn bit_len(&self) -> u64 {
        self.total
    }

    /// Pad the final partial byte with 1-bits and return the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits as u8;
            let total = self.total;
            self.write((1u32 << pad) - 1, pad);
            self.total = total;
        }
        self.bytes
    }

    /// Bits as a '0'/'1' string, padding excluded.
    pub fn to_bit_string(&self) -> String {
        let mut s = String::with_capacity(self.total as usize);
        for b in &self.bytes {
            s.push_str(&format!("{b:08b}"));
        }
        for i in (0..self.nbits).rev() {
            s.push(if self.acc >> i & 1 == 1 { '1' } else { '0' });
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.bytes.len() as u64 * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<u32> {
        let byte = *self
            .bytes
            .get((self.pos >> 3) as usize)
            .ok_or_else(|| Error::format("entropy data truncated"))?;
        let bit = (byte >> (7 - (self.pos & 7))) & 1;
        self.pos += 1;
        Ok(bit as u32)
    }

    pub fn read(&mut self, len: u8) -> Result<u32> {
        if len as u64 > self.remaining() {
            return Err(Error::format("entropy data truncated"));
        }
        let mut v = 0u32;
        for _ in 0..len {
            v = (v << 1) | self.read_bit()?;
        }
        Ok(v)
    }
}
