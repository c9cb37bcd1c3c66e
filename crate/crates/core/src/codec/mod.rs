//! Baseline JPEG: color conversion, 8x8 DCT, quantization, zig-zag, VLI and
//! Huffman entropy coding, and a JFIF writer/parser.
//!
//! The entropy layer is exposed at token granularity ([`VliToken`],
//! [`BlockTokens`], [`EntropyStream`]) so that encryption can rewrite VLI
//! bits and feature extraction can read categories and table rows without
//! touching pixels.

pub mod bitio;
pub mod color;
pub mod dct;
pub mod entropy;
pub mod huffman;
pub mod jfif;
pub mod quant;
pub mod vli;
pub mod zigzag;

mod pipeline;

pub use color::{rgb_to_yuv, yuv_to_rgb, YuvPlanes};
pub use entropy::{BlockTokens, EntropyStream, QuantizedBlock, VliToken};
pub use huffman::{HuffmanSpec, HuffmanTable, HuffmanTables};
pub use jfif::{parse_jpeg, serialize_jpeg, JpegFile};
pub use pipeline::{decode_grid, decompress, decompress_file, encode_grid, CoefficientGrid, JpegEncoder};
pub use quant::QuantTable;

use crate::error::{Error, Result};

/// The three 4:4:4 components, in scan order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Y = 0,
    U = 1,
    V = 2,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Y, Component::U, Component::V];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Table class: luma tables for Y, chroma tables for U and V.
    pub fn is_luma(self) -> bool {
        self == Component::Y
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Y => "Y",
            Component::U => "U",
            Component::V => "V",
        }
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if width > u16::MAX as u32 || height > u16::MAX as u32 {
            return Err(Error::invalid(format!(
                "image {width}x{height} exceeds the JPEG 65535 limit"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} RGB bytes for {width}x{height}, got {}",
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        RgbImage::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Result<Self> {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        RgbImage::new(w, h, rgb.into_raw())
    }

    /// Load any PNG, JPEG or BMP file as 8-bit RGB.
    pub fn open(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        RgbImage::from_dynamic(&image::load_from_memory(&bytes)?)
    }

    /// Lossless save; the format follows the extension.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.to_image_buffer().save(path)?;
        Ok(())
    }

    pub fn to_image_buffer(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("dimensions validated at construction")
    }

    /// Number of 8x8 blocks per component once padded.
    pub fn block_count(&self) -> usize {
        blocks_for(self.width) * blocks_for(self.height)
    }
}

pub(crate) fn blocks_for(dim: u32) -> usize {
    (dim as usize).div_ceil(8)
}
