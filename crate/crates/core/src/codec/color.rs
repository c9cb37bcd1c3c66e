//! BT.601 full-range (JFIF) RGB <-> YCbCr.

use super::{blocks_for, RgbImage};
use crate::error::{Error, Result};

/// Three equally sized 8-bit planes (4:4:4).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YuvPlanes {
    pub width: u32,
    pub height: u32,
    pub planes: [Vec<u8>; 3],
}

impl YuvPlanes {
    pub fn new(width: u32, height: u32, planes: [Vec<u8>; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        if width == 0 || height == 0 {
            return Err(Error::invalid("plane dimensions must be positive"));
        }
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::invalid(format!(
                "plane sizes {:?} do not match {width}x{height}",
                planes.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        Ok(YuvPlanes {
            width,
            height,
            planes,
        })
    }

    /// Edge-replicate every plane up to the next multiple of 8.
    pub fn padded(&self) -> YuvPlanes {
        let pw = blocks_for(self.width) * 8;
        let ph = blocks_for(self.height) * 8;
        let (w, h) = (self.width as usize, self.height as usize);
        let planes = self.planes.clone().map(|plane| {
            let mut out = Vec::with_capacity(pw * ph);
            for y in 0..ph {
                let row = &plane[y.min(h - 1) * w..][..w];
                out.extend_from_slice(row);
                out.extend(std::iter::repeat_n(row[w - 1], pw - w));
            }
            out
        });
        YuvPlanes {
            width: pw as u32,
            height: ph as u32,
            planes,
        }
    }

    /// Crop to the top-left `width` x `height` region.
    pub fn cropped(&self, width: u32, height: u32) -> Result<YuvPlanes> {
        if width > self.width || height > self.height {
            return Err(Error::invalid("crop larger than planes"));
        }
        let (sw, w, h) = (self.width as usize, width as usize, height as usize);
        let planes = self.planes.clone().map(|plane| {
            (0..h)
                .flat_map(|y| plane[y * sw..y * sw + w].iter().copied())
                .collect()
        });
        YuvPlanes::new(width, height, planes)
    }
}

#[inline]
fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn rgb_pixel_to_yuv([r, g, b]: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let u = -0.168_735_892 * r - 0.331_264_108 * g + 0.5 * b + 128.0;
    let v = 0.5 * r - 0.418_687_589 * g - 0.081_312_411 * b + 128.0;
    [clamp_u8(y), clamp_u8(u), clamp_u8(v)]
}

pub fn yuv_pixel_to_rgb([y, u, v]: [u8; 3]) -> [u8; 3] {
    let (y, cb, cr) = (y as f64, u as f64 - 128.0, v as f64 - 128.0);
    let r = y + 1.402 * cr;
    let g = y - 0.344_136_286 * cb - 0.714_136_286 * cr;
    let b = y + 1.772 * cb;
    [clamp_u8(r), clamp_u8(g), clamp_u8(b)]
}

pub fn rgb_to_yuv(image: &RgbImage) -> YuvPlanes {
    let n = image.width() as usize * image.height() as usize;
    let mut planes = [vec![0u8; n], vec![0u8; n], vec![0u8; n]];
    for (i, px) in image.pixels().chunks_exact(3).enumerate() {
        let yuv = rgb_pixel_to_yuv([px[0], px[1], px[2]]);
        for c in 0..3 {
            planes[c][i] = yuv[c];
        }
    }
    YuvPlanes {
        width: image.width(),
        height: image.height(),
        planes,
    }
}

pub fn yuv_to_rgb(planes: &YuvPlanes) -> Result<RgbImage> {
    let n = planes.width as usize * planes.height as usize;
    if planes.planes.iter().any(|p| p.len() != n) {
        return Err(Error::invalid("mismatched plane dimensions"));
    }
    let mut pixels = Vec::with_capacity(n * 3);
    for i in 0..n {
        let rgb = yuv_pixel_to_rgb([planes.planes[0][i], planes.planes[1][i], planes.planes[2][i]]);
        pixels.extend_from_slice(&rgb);
    }
    RgbImage::new(planes.width, planes.height, pixels)
}
