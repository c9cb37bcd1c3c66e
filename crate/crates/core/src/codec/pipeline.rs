use rayon::prelude::*;

use super::entropy::{detokenize_block, tokenize_block, BlockTokens, EntropyStream};
use super::huffman::HuffmanTables;
use super::jfif::{parse_jpeg, serialize_jpeg, JpegFile};
use super::quant::{dequantize, quantize, QuantTable};
use super::{blocks_for, color, dct, zigzag, Component, RgbImage, YuvPlanes};
use crate::error::{Error, Result};

/// Quantized zig-zag coefficients for every block of every component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientGrid {
    pub width: u32,
    pub height: u32,
    pub blocks_w: usize,
    pub blocks_h: usize,
    pub components: [Vec<[i32; 64]>; 3],
}

impl CoefficientGrid {
    pub fn block_count(&self) -> usize {
        self.blocks_w * self.blocks_h
    }

    /// DPCM + RLE tokenization in raster order, one DC predictor per component.
    pub fn tokenize(&self) -> Result<EntropyStream> {
        let mut components: [Vec<BlockTokens>; 3] = Default::default();
        for c in Component::ALL {
            let mut prev = 0;
            let mut out = Vec::with_capacity(self.block_count());
            for block in &self.components[c.index()] {
                let (t, dc) = tokenize_block(block, prev)?;
                prev = dc;
                out.push(t);
            }
            components[c.index()] = out;
        }
        Ok(EntropyStream {
            blocks_w: self.blocks_w,
            blocks_h: self.blocks_h,
            components,
        })
    }

    pub fn from_stream(stream: &EntropyStream, width: u32, height: u32) -> Result<Self> {
        if blocks_for(width) != stream.blocks_w || blocks_for(height) != stream.blocks_h {
            return Err(Error::mismatch(format!(
                "{width}x{height} does not match a {}x{} block grid",
                stream.blocks_w, stream.blocks_h
            )));
        }
        let mut components: [Vec<[i32; 64]>; 3] = Default::default();
        for c in Component::ALL {
            let mut prev = 0;
            let tokens = &stream.components[c.index()];
            if tokens.len() != stream.block_count() {
                return Err(Error::format("component block count mismatch"));
            }
            let mut out = Vec::with_capacity(tokens.len());
            for t in tokens {
                let (b, dc) = detokenize_block(t, prev)?;
                prev = dc;
                out.push(b);
            }
            components[c.index()] = out;
        }
        Ok(CoefficientGrid {
            width,
            height,
            blocks_w: stream.blocks_w,
            blocks_h: stream.blocks_h,
            components,
        })
    }
}

/// Color convert, pad, DCT, quantize and zig-zag an image.
pub fn encode_grid(image: &RgbImage, quant: &[QuantTable; 2]) -> Result<CoefficientGrid> {
    let planes = color::rgb_to_yuv(image).padded();
    let bw = planes.width as usize / 8;
    let bh = planes.height as usize / 8;
    let mut components: [Vec<[i32; 64]>; 3] = Default::default();
    for c in Component::ALL {
        let plane = &planes.planes[c.index()];
        let steps = quant[if c.is_luma() { 0 } else { 1 }].steps();
        components[c.index()] = (0..bw * bh)
            .into_par_iter()
            .map(|i| {
                let (bx, by) = (i % bw, i / bw);
                let mut samples = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        samples[y * 8 + x] =
                            plane[(by * 8 + y) * bw * 8 + bx * 8 + x] as f64 - 128.0;
                    }
                }
                quantize(&dct::forward(&samples), steps).map(|q| zigzag::forward(&q))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(CoefficientGrid {
        width: image.width(),
        height: image.height(),
        blocks_w: bw,
        blocks_h: bh,
        components,
    })
}

/// Dequantize, inverse DCT, crop and color convert back to RGB.
pub fn decode_grid(grid: &CoefficientGrid, quant: &[QuantTable; 2]) -> Result<RgbImage> {
    let (bw, bh) = (grid.blocks_w, grid.blocks_h);
    let pw = bw * 8;
    let mut planes: [Vec<u8>; 3] = Default::default();
    for c in Component::ALL {
        let steps = quant[if c.is_luma() { 0 } else { 1 }].steps();
        let blocks = &grid.components[c.index()];
        if blocks.len() != bw * bh {
            return Err(Error::format("component block count mismatch"));
        }
        let decoded: Vec<[u8; 64]> = blocks
            .par_iter()
            .map(|zz| {
                let samples = dct::inverse(&dequantize(&zigzag::inverse(zz), steps));
                samples.map(|s| (s + 128.0).round().clamp(0.0, 255.0) as u8)
            })
            .collect();
        let mut plane = vec![0u8; pw * bh * 8];
        for (i, block) in decoded.iter().enumerate() {
            let (bx, by) = (i % bw, i / bw);
            for y in 0..8 {
                let row = (by * 8 + y) * pw + bx * 8;
                plane[row..row + 8].copy_from_slice(&block[y * 8..y * 8 + 8]);
            }
        }
        planes[c.index()] = plane;
    }
    let full = YuvPlanes::new(pw as u32, (bh * 8) as u32, planes)?;
    color::yuv_to_rgb(&full.cropped(grid.width, grid.height)?)
}

/// Baseline 4:4:4 encoder with quality-scaled Annex K tables and the
/// typical Huffman tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JpegEncoder {
    pub quality: u8,
}

impl Default for JpegEncoder {
    fn default() -> Self {
        JpegEncoder { quality: 50 }
    }
}

impl JpegEncoder {
    pub fn new(quality: u8) -> Result<Self> {
        QuantTable::luma(quality)?;
        Ok(JpegEncoder { quality })
    }

    pub fn quant_tables(&self) -> Result<[QuantTable; 2]> {
        Ok([QuantTable::luma(self.quality)?, QuantTable::chroma(self.quality)?])
    }

    pub fn coefficients(&self, image: &RgbImage) -> Result<CoefficientGrid> {
        encode_grid(image, &self.quant_tables()?)
    }

    /// Structured (not yet serialized) plain JPEG.
    pub fn encode_file(&self, image: &RgbImage) -> Result<JpegFile> {
        let quant = self.quant_tables()?;
        let grid = encode_grid(image, &quant)?;
        Ok(JpegFile {
            width: image.width() as u16,
            height: image.height() as u16,
            quant,
            huffman: HuffmanTables::typical(),
            stream: grid.tokenize()?,
        })
    }

    pub fn compress(&self, image: &RgbImage) -> Result<Vec<u8>> {
        serialize_jpeg(&self.encode_file(image)?)
    }
}

/// Standard decode of a parsed file (no decryption).
pub fn decompress_file(file: &JpegFile) -> Result<RgbImage> {
    let grid = CoefficientGrid::from_stream(&file.stream, file.width as u32, file.height as u32)?;
    decode_grid(&grid, &file.quant)
}

pub fn decompress(bytes: &[u8]) -> Result<RgbImage> {
    decompress_file(&parse_jpeg(bytes)?)
}
