//! Token-level entropy coding: DPCM for DC, run-length pairs for AC, each
//! emitted as a Huffman code followed by VLI magnitude bits.

use super::bitio::{BitReader, BitWriter};
use super::huffman::{
    ac_row_symbol, ac_run_size, ac_symbol_row, HuffmanTable, HuffmanTables, EOB_ROW, ZRL_ROW,
};
use super::{vli, Component};
use crate::error::{Error, Result};

/// 64 quantized coefficients in zig-zag order; `coeffs[0]` is DC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantizedBlock {
    pub coeffs: [i32; 64],
    pub component: Component,
}

/// One Huffman symbol plus its VLI bits.
///
/// `huffman_row` is the category for DC tokens and the Annex K row for AC
/// tokens (see [`super::huffman::ac_symbol_row`]). EOB and ZRL are AC tokens
/// with category 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VliToken {
    pub category: u8,
    pub bits: u16,
    pub huffman_row: u8,
}

impl VliToken {
    pub fn dc(category: u8, bits: u16) -> Self {
        VliToken {
            category,
            bits,
            huffman_row: category,
        }
    }

    pub const EOB: VliToken = VliToken {
        category: 0,
        bits: 0,
        huffman_row: EOB_ROW,
    };

    pub const ZRL: VliToken = VliToken {
        category: 0,
        bits: 0,
        huffman_row: ZRL_ROW,
    };

    /// Zero-run preceding an AC token (16 for ZRL, 0 for EOB).
    pub fn ac_run(&self) -> u8 {
        match self.huffman_row {
            ZRL_ROW => 16,
            EOB_ROW => 0,
            row => ac_run_size(ac_row_symbol(row).unwrap_or(0)).0,
        }
    }

    pub fn is_eob(&self) -> bool {
        self.huffman_row == EOB_ROW
    }

    pub fn is_zrl(&self) -> bool {
        self.huffman_row == ZRL_ROW
    }
}

/// All tokens of one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTokens {
    pub dc: VliToken,
    pub ac: Vec<VliToken>,
}

/// Per-component token lists in raster block order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntropyStream {
    pub blocks_w: usize,
    pub blocks_h: usize,
    pub components: [Vec<BlockTokens>; 3],
}

impl EntropyStream {
    pub fn block_count(&self) -> usize {
        self.blocks_w * self.blocks_h
    }

    /// Number of coded bits (Huffman + VLI) across the whole stream.
    pub fn coded_bits(&self, tables: &HuffmanTables) -> Result<u64> {
        let mut w = BitWriter::new();
        for i in 0..self.block_count() {
            for c in Component::ALL {
                let t = class(c);
                write_tokens(&mut w, &self.components[c.index()][i], &tables.dc[t], &tables.ac[t])?;
            }
        }
        Ok(w.bit_len())
    }
}

#[inline]
pub(crate) fn class(c: Component) -> usize {
    if c.is_luma() {
        0
    } else {
        1
    }
}

/// RLE + VLI tokenization. Returns the tokens and the new DC predictor.
pub fn tokenize_block(coeffs: &[i32; 64], prev_dc: i32) -> Result<(BlockTokens, i32)> {
    let diff = coeffs[0] - prev_dc;
    let (cat, bits) = vli::encode(diff)?;
    if cat > 11 {
        return Err(Error::invalid(format!("DC difference {diff} out of range")));
    }
    let dc = VliToken::dc(cat, bits);

    let mut ac = Vec::new();
    let mut run = 0u8;
    for &v in &coeffs[1..] {
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            ac.push(VliToken::ZRL);
            run -= 16;
        }
        let (cat, bits) = vli::encode(v)?;
        if cat > 10 {
            return Err(Error::invalid(format!("AC coefficient {v} out of range")));
        }
        let row = ac_symbol_row(run << 4 | cat).expect("run < 16 and 1 <= cat <= 10");
        ac.push(VliToken {
            category: cat,
            bits,
            huffman_row: row,
        });
        run = 0;
    }
    if run > 0 {
        ac.push(VliToken::EOB);
    }
    Ok((BlockTokens { dc, ac }, coeffs[0]))
}

/// Inverse of [`tokenize_block`].
pub fn detokenize_block(tokens: &BlockTokens, prev_dc: i32) -> Result<([i32; 64], i32)> {
    let mut out = [0i32; 64];
    let dc = prev_dc + vli::decode(tokens.dc.category, tokens.dc.bits)?;
    out[0] = dc;
    let mut pos = 1usize;
    for t in &tokens.ac {
        if t.is_eob() {
            break;
        }
        if t.is_zrl() {
            pos += 16;
            if pos > 64 {
                return Err(Error::format("zero run past end of block"));
            }
            continue;
        }
        pos += t.ac_run() as usize;
        if pos > 63 {
            return Err(Error::format("AC coefficient index beyond 63"));
        }
        out[pos] = vli::decode(t.category, t.bits)?;
        pos += 1;
    }
    Ok((out, dc))
}

pub fn write_tokens(
    w: &mut BitWriter,
    tokens: &BlockTokens,
    dc: &HuffmanTable,
    ac: &HuffmanTable,
) -> Result<()> {
    let (code, len) = dc
        .code(tokens.dc.huffman_row)
        .ok_or_else(|| Error::invalid(format!("DC category {} not in table", tokens.dc.huffman_row)))?;
    w.write(code as u32, len);
    w.write(tokens.dc.bits as u32, tokens.dc.category);
    for t in &tokens.ac {
        let sym = ac_row_symbol(t.huffman_row)
            .ok_or_else(|| Error::invalid(format!("AC row {} out of range", t.huffman_row)))?;
        let (code, len) = ac
            .code(sym)
            .ok_or_else(|| Error::invalid(format!("AC symbol {sym:#04x} not in table")))?;
        w.write(code as u32, len);
        w.write(t.bits as u32, t.category);
    }
    Ok(())
}

pub fn read_tokens(r: &mut BitReader<'_>, dc: &HuffmanTable, ac: &HuffmanTable) -> Result<BlockTokens> {
    let cat = dc.decode_with(|| r.read_bit())?;
    if cat > 11 {
        return Err(Error::format(format!("DC category {cat} > 11")));
    }
    let bits = r.read(cat)? as u16;
    let dc_tok = VliToken::dc(cat, bits);

    let mut tokens = Vec::new();
    let mut pos = 1usize;
    while pos < 64 {
        let sym = ac.decode_with(|| r.read_bit())?;
        let row = ac_symbol_row(sym)
            .ok_or_else(|| Error::format(format!("invalid AC symbol {sym:#04x}")))?;
        let (run, size) = ac_run_size(sym);
        let bits = r.read(size)? as u16;
        let tok = VliToken {
            category: size,
            bits,
            huffman_row: row,
        };
        tokens.push(tok);
        if tok.is_eob() {
            break;
        }
        pos += if tok.is_zrl() { 16 } else { run as usize + 1 };
        if pos > 64 {
            return Err(Error::format("AC run overflows block"));
        }
    }
    Ok(BlockTokens {
        dc: dc_tok,
        ac: tokens,
    })
}

/// Entropy-code one block: `DCH || DCV || (ACH || ACV)*`.
pub fn encode_block(
    block: &QuantizedBlock,
    prev_dc: i32,
    tables: &HuffmanTables,
) -> Result<(BitWriter, i32)> {
    let (tokens, dc) = tokenize_block(&block.coeffs, prev_dc)?;
    let t = class(block.component);
    let mut w = BitWriter::new();
    write_tokens(&mut w, &tokens, &tables.dc[t], &tables.ac[t])?;
    Ok((w, dc))
}

/// Decode one block positioned at `r`.
pub fn decode_block(
    r: &mut BitReader<'_>,
    component: Component,
    prev_dc: i32,
    tables: &HuffmanTables,
) -> Result<(QuantizedBlock, i32)> {
    let t = class(component);
    let tokens = read_tokens(r, &tables.dc[t], &tables.ac[t])?;
    let (coeffs, dc) = detokenize_block(&tokens, prev_dc)?;
    Ok((QuantizedBlock { coeffs, component }, dc))
}
