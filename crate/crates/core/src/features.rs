//! Key-independent features read from the entropy layer of a cipher JPEG.
//!
//! Only Huffman symbols are interpreted, never VLI bits, so every value here
//! is identical for any key used at encryption time.
//!
//! * Local: per block, the zig-zag sequence of VLI lengths (categories),
//!   64 luma + first 32 U + first 32 V = 128 entries.
//! * Global: how often each Huffman table row is used over the whole image,
//!   `(12 DC + 162 AC) x 3` = 522 counts laid out `[Y_dc, Y_ac, U_dc, U_ac, V_dc, V_ac]`.

use crate::codec::huffman::{AC_ROWS, DC_ROWS};
use crate::codec::{parse_jpeg, BlockTokens, Component, EntropyStream, JpegFile};
use crate::crypto::CipherJpeg;
use crate::error::{Error, Result};

pub const BLOCK_DIM: usize = 128;
pub const LUMA_LEN: usize = 64;
pub const CHROMA_LEN: usize = 32;
pub const COMPONENT_ROWS: usize = DC_ROWS + AC_ROWS;
pub const GLOBAL_DIM: usize = COMPONENT_ROWS * 3;

pub type BlockLengthSequence = [u8; BLOCK_DIM];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffFreqVector(pub Vec<u32>);

impl HuffFreqVector {
    pub fn zeros() -> Self {
        HuffFreqVector(vec![0; GLOBAL_DIM])
    }

    pub fn dc_counts(&self, c: Component) -> &[u32] {
        let start = c.index() * COMPONENT_ROWS;
        &self.0[start..start + DC_ROWS]
    }

    pub fn ac_counts(&self, c: Component) -> &[u32] {
        let start = c.index() * COMPONENT_ROWS + DC_ROWS;
        &self.0[start..start + AC_ROWS]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    pub image_id: String,
    /// Raster block order.
    pub blocks: Vec<BlockLengthSequence>,
    pub global: HuffFreqVector,
}

impl FeatureSet {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

/// Zig-zag category sequence of one component's block, first `keep` entries.
fn component_lengths(tokens: &BlockTokens, out: &mut [u8]) -> Result<()> {
    let keep = out.len();
    out.fill(0);
    out[0] = tokens.dc.category;
    let mut pos = 1usize;
    for t in &tokens.ac {
        if t.is_eob() {
            break;
        }
        if t.is_zrl() {
            pos += 16;
            continue;
        }
        pos += t.ac_run() as usize;
        if pos > 63 {
            return Err(Error::format("token index beyond 63"));
        }
        if pos < keep {
            out[pos] = t.category;
        }
        pos += 1;
    }
    Ok(())
}

/// Build the 128-entry length sequence for one block from its Y, U, V tokens.
pub fn block_length_sequence(y: &BlockTokens, u: &BlockTokens, v: &BlockTokens) -> Result<BlockLengthSequence> {
    let mut seq = [0u8; BLOCK_DIM];
    component_lengths(y, &mut seq[..LUMA_LEN])?;
    component_lengths(u, &mut seq[LUMA_LEN..LUMA_LEN + CHROMA_LEN])?;
    component_lengths(v, &mut seq[LUMA_LEN + CHROMA_LEN..])?;
    Ok(seq)
}

/// Row-usage counts over the whole stream, EOB and ZRL included.
pub fn stream_frequency(stream: &EntropyStream) -> HuffFreqVector {
    let mut counts = HuffFreqVector::zeros();
    for c in Component::ALL {
        let base = c.index() * COMPONENT_ROWS;
        for block in &stream.components[c.index()] {
            counts.0[base + block.dc.huffman_row as usize] += 1;
            for t in &block.ac {
                counts.0[base + DC_ROWS + t.huffman_row as usize] += 1;
            }
        }
    }
    counts
}

pub fn global_huffman_frequency(cipher: &CipherJpeg) -> Result<HuffFreqVector> {
    Ok(stream_frequency(&parse_jpeg(cipher.as_bytes())?.stream))
}

pub fn extract_from_file(file: &JpegFile, image_id: impl Into<String>) -> Result<FeatureSet> {
    let s = &file.stream;
    let blocks = (0..s.block_count())
        .map(|i| block_length_sequence(&s.components[0][i], &s.components[1][i], &s.components[2][i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet {
        image_id: image_id.into(),
        blocks,
        global: stream_frequency(s),
    })
}

/// Parse a cipher (or plain) JPEG and compute its features. No key involved.
pub fn extract(cipher: &CipherJpeg, image_id: impl Into<String>) -> Result<FeatureSet> {
    extract_from_file(&parse_jpeg(cipher.as_bytes())?, image_id)
}
