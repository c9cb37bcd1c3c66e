//! Separable 8x8 DCT-II / DCT-III with JPEG normalization.
//!
//! `F(u,v) = 1/4 C(u) C(v) sum_x sum_y f(x,y) cos((2x+1)u pi/16) cos((2y+1)v pi/16)`
//! with `C(0) = 1/sqrt(2)`, so a constant block of value `c` has DC `8c`.

use std::sync::OnceLock;

/// `basis[u][x] = C(u)/2 * cos((2x+1) u pi / 16)`; orthonormal rows.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { (0.5f64).sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5
                    * cu
                    * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        b
    })
}

/// Forward DCT of a row-major 8x8 block of level-shifted samples.
pub fn forward(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    // rows
    for y in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                acc += b[u][x] * block[y * 8 + x];
            }
            tmp[y * 8 + u] = acc;
        }
    }
    let mut out = [0.0; 64];
    // columns
    for v in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                acc += b[v][y] * tmp[y * 8 + u];
            }
            out[v * 8 + u] = acc;
        }
    }
    out
}

/// Inverse DCT; `inverse(&forward(x)) == x` up to rounding.
pub fn inverse(coeffs: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += b[u][x] * coeffs[v * 8 + u];
            }
            tmp[v * 8 + x] = acc;
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += b[v][y] * tmp[v * 8 + x];
            }
            out[y * 8 + x] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_blocks() {
        let zero = forward(&[0.0; 64]);
        assert!(zero.iter().all(|c| c.abs() < 1e-12));
        // sample value 136 after the 128 level shift
        let c = forward(&[8.0; 64]);
        assert!((c[0] - 64.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut x = [0.0; 64];
            x.iter_mut().for_each(|v| *v = rng.gen_range(-128.0..128.0));
            let y = inverse(&forward(&x));
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }

    /// Direct O(n^4) definition as an oracle for the separable version.
    #[test]
    fn matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = [0.0; 64];
        x.iter_mut().for_each(|v| *v = rng.gen_range(-128.0..128.0));
        let fast = forward(&x);
        for v in 0..8 {
            for u in 0..8 {
                let cu = if u == 0 { 0.5f64.sqrt() } else { 1.0 };
                let cv = if v == 0 { 0.5f64.sqrt() } else { 1.0 };
                let mut acc = 0.0;
                for yy in 0..8 {
                    for xx in 0..8 {
                        acc += x[yy * 8 + xx]
                            * ((2 * xx + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
                            * ((2 * yy + 1) as f64 * v as f64 * std::f64::consts::PI / 16.0).cos();
                    }
                }
                let direct = 0.25 * cu * cv * acc;
                assert!((direct - fast[v * 8 + u]).abs() < 1e-9);
            }
        }
    }
}
