use crate::error::{Error, Result};

/// Annex K luminance table, natural (row-major) order.
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance table, natural order.
pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// 64 quantizer steps in natural order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantTable(pub [u16; 64]);

impl QuantTable {
    pub fn new(steps: [u16; 64]) -> Result<Self> {
        if steps.contains(&0) {
            return Err(Error::invalid("quantizer steps must be >= 1"));
        }
        Ok(QuantTable(steps))
    }

    /// libjpeg-style quality scaling; quality 50 returns the base table.
    pub fn scaled(base: &[u16; 64], quality: u8) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::invalid(format!(
                "quality must be in 1..=100, got {quality}"
            )));
        }
        let q = quality as u32;
        let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
        let mut steps = [0u16; 64];
        for (s, &b) in steps.iter_mut().zip(base) {
            *s = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
        }
        Ok(QuantTable(steps))
    }

    pub fn luma(quality: u8) -> Result<Self> {
        Self::scaled(&LUMA_BASE, quality)
    }

    pub fn chroma(quality: u8) -> Result<Self> {
        Self::scaled(&CHROMA_BASE, quality)
    }

    pub fn steps(&self) -> &[u16; 64] {
        &self.0
    }
}

/// Round half away from zero.
#[inline]
pub fn round_half_away(x: f64) -> i32 {
    // f64::round already rounds half away from zero
    x.round() as i32
}

/// Quantize natural-order DCT coefficients.
pub fn quantize(coeffs: &[f64; 64], steps: &[u16; 64]) -> Result<[i32; 64]> {
    let mut out = [0i32; 64];
    for i in 0..64 {
        if steps[i] == 0 {
            return Err(Error::invalid("zero quantizer step"));
        }
        out[i] = round_half_away(coeffs[i] / steps[i] as f64);
    }
    Ok(out)
}

pub fn dequantize(levels: &[i32; 64], steps: &[u16; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for i in 0..64 {
        out[i] = levels[i] as f64 * steps[i] as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_rounding() {
        let mut c = [0.0; 64];
        c[0] = 16.0;
        c[1] = -16.0;
        c[2] = 15.0;
        c[3] = -15.0;
        let q = quantize(&c, &[10; 64]).unwrap();
        assert_eq!(&q[..4], &[2, -2, 2, -2]);
    }

    #[test]
    fn zero_step_rejected() {
        assert!(quantize(&[0.0; 64], &[0; 64]).is_err());
        assert!(QuantTable::new([0; 64]).is_err());
        assert!(QuantTable::luma(0).is_err());
    }

    #[test]
    fn dequantize_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut c = [0.0; 64];
            c.iter_mut().for_each(|v| *v = rng.gen_range(-1000.0..1000.0));
            let steps: [u16; 64] = std::array::from_fn(|_| rng.gen_range(1..=255));
            let back = dequantize(&quantize(&c, &steps).unwrap(), &steps);
            for i in 0..64 {
                assert!((back[i] - c[i]).abs() <= steps[i] as f64 / 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn quality_fifty_is_base() {
        assert_eq!(QuantTable::luma(50).unwrap().0, LUMA_BASE);
        assert_eq!(QuantTable::chroma(50).unwrap().0, CHROMA_BASE);
        assert!(QuantTable::luma(100).unwrap().0.iter().all(|&s| s == 1));
    }
}
