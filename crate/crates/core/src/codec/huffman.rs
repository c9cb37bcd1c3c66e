//! Canonical Huffman tables and the typical (Annex K) table set.
//!
//! Besides code construction this module fixes the *row numbering* used by
//! the frequency features: DC rows are the category (0..=11); AC rows follow
//! the Annex K listing order, EOB first, then run/size pairs with ZRL (F/0)
//! placed between runs 14 and 15.

use crate::error::{Error, Result};

pub const DC_ROWS: usize = 12;
pub const AC_ROWS: usize = 162;

pub const EOB_SYMBOL: u8 = 0x00;
pub const ZRL_SYMBOL: u8 = 0xF0;
pub const EOB_ROW: u8 = 0;
pub const ZRL_ROW: u8 = 151;

/// DHT payload: code counts per length 1..=16 and symbols in code order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanSpec {
    pub counts: [u8; 16],
    pub symbols: Vec<u8>,
}

impl HuffmanSpec {
    pub fn new(counts: [u8; 16], symbols: Vec<u8>) -> Result<Self> {
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        if total != symbols.len() || total > 256 {
            return Err(Error::format(format!(
                "huffman table declares {total} codes but lists {} symbols",
                symbols.len()
            )));
        }
        // Kraft: codes of each length must fit in the remaining code space.
        let mut space: u32 = 1;
        for &c in &counts {
            space *= 2;
            if c as u32 > space {
                return Err(Error::format("huffman code lengths oversubscribed"));
            }
            space -= c as u32;
        }
        Ok(HuffmanSpec { counts, symbols })
    }

    pub fn luma_dc() -> Self {
        HuffmanSpec {
            counts: [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0],
            symbols: (0..12).collect(),
        }
    }

    pub fn chroma_dc() -> Self {
        HuffmanSpec {
            counts: [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
            symbols: (0..12).collect(),
        }
    }

    pub fn luma_ac() -> Self {
        HuffmanSpec {
            counts: [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d],
            symbols: LUMA_AC_SYMBOLS.to_vec(),
        }
    }

    pub fn chroma_ac() -> Self {
        HuffmanSpec {
            counts: [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77],
            symbols: CHROMA_AC_SYMBOLS.to_vec(),
        }
    }
}

/// A spec expanded into encode and decode lookups.
#[derive(Debug, Clone)]
pub struct HuffmanTable {
    spec: HuffmanSpec,
    /// symbol -> (code, length); length 0 means absent
    codes: [(u16, u8); 256],
    maxcode: [i32; 17],
    valptr: [i32; 17],
    mincode: [i32; 17],
}

impl PartialEq for HuffmanTable {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl Eq for HuffmanTable {}

impl HuffmanTable {
    pub fn new(spec: HuffmanSpec) -> Result<Self> {
        let spec = HuffmanSpec::new(spec.counts, spec.symbols)?;
        let mut codes = [(0u16, 0u8); 256];
        let mut maxcode = [-1i32; 17];
        let mut valptr = [0i32; 17];
        let mut mincode = [0i32; 17];
        let mut code: u32 = 0;
        let mut k = 0usize;
        for len in 1..=16usize {
            let n = spec.counts[len - 1] as usize;
            if n > 0 {
                valptr[len] = k as i32;
                mincode[len] = code as i32;
                for _ in 0..n {
                    let sym = spec.symbols[k] as usize;
                    if codes[sym].1 != 0 {
                        return Err(Error::format(format!(
                            "symbol {sym:#04x} listed twice in huffman table"
                        )));
                    }
                    codes[sym] = (code as u16, len as u8);
                    code += 1;
                    k += 1;
                }
                maxcode[len] = code as i32 - 1;
            }
            code <<= 1;
        }
        Ok(HuffmanTable {
            spec,
            codes,
            maxcode,
            valptr,
            mincode,
        })
    }

    pub fn spec(&self) -> &HuffmanSpec {
        &self.spec
    }

    /// `(code, length)` for a symbol, if the table defines it.
    pub fn code(&self, symbol: u8) -> Option<(u16, u8)> {
        let (c, l) = self.codes[symbol as usize];
        (l > 0).then_some((c, l))
    }

    /// Decode one symbol, pulling bits one at a time from `next_bit`.
    pub fn decode_with<F>(&self, mut next_bit: F) -> Result<u8>
    where
        F: FnMut() -> Result<u32>,
    {
        let mut code: i32 = 0;
        for len in 1..=16 {
            code = (code << 1) | next_bit()? as i32;
            if code <= self.maxcode[len] {
                let idx = self.valptr[len] + code - self.mincode[len];
                return Ok(self.spec.symbols[idx as usize]);
            }
        }
        Err(Error::format("invalid huffman prefix in entropy data"))
    }

    /// All defined `(symbol, code, length)` triples.
    pub fn entries(&self) -> impl Iterator<Item = (u8, u16, u8)> + '_ {
        self.spec.symbols.iter().map(|&s| {
            let (c, l) = self.codes[s as usize];
            (s, c, l)
        })
    }
}

/// Table set indexed by class: `[0]` luma, `[1]` chroma.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTables {
    pub dc: [HuffmanTable; 2],
    pub ac: [HuffmanTable; 2],
}

impl HuffmanTables {
    pub fn typical() -> Self {
        let build = |s| HuffmanTable::new(s).expect("typical tables are valid");
        HuffmanTables {
            dc: [build(HuffmanSpec::luma_dc()), build(HuffmanSpec::chroma_dc())],
            ac: [build(HuffmanSpec::luma_ac()), build(HuffmanSpec::chroma_ac())],
        }
    }
}

/// Split an AC symbol into (run, size).
#[inline]
pub fn ac_run_size(symbol: u8) -> (u8, u8) {
    (symbol >> 4, symbol & 0x0F)
}

/// AC table row for a run/size symbol, in Annex K listing order.
pub fn ac_symbol_row(symbol: u8) -> Option<u8> {
    let (run, size) = ac_run_size(symbol);
    match (run, size) {
        (0, 0) => Some(EOB_ROW),
        (15, 0) => Some(ZRL_ROW),
        (_, 0) | (_, 11..) => None,
        (15, s) => Some(152 + s - 1),
        (r, s) => Some(1 + r * 10 + s - 1),
    }
}

/// Inverse of [`ac_symbol_row`].
pub fn ac_row_symbol(row: u8) -> Option<u8> {
    match row {
        EOB_ROW => Some(EOB_SYMBOL),
        ZRL_ROW => Some(ZRL_SYMBOL),
        1..=150 => {
            let r = (row - 1) / 10;
            let s = (row - 1) % 10 + 1;
            Some(r << 4 | s)
        }
        152..=161 => Some(0xF0 | (row - 151)),
        _ => None,
    }
}

const LUMA_AC_SYMBOLS: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
    0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5,
    0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
];

const CHROMA_AC_SYMBOLS: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0,
    0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
    0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5,
    0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
    0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
    0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
];
