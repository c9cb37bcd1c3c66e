//! Procedural test images: a three-class texture corpus and photo-like scenes.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::RgbImage;
use crate::error::Result;

pub const TEXTURE_CLASSES: [&str; 3] = ["waves", "checks", "grain"];

fn clamp8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.gen_range(30.0..225.0), rng.gen_range(30.0..225.0), rng.gen_range(30.0..225.0)]
}

/// One image of texture class `class` (0 waves, 1 checks, 2 grain).
pub fn texture_image<R: Rng + ?Sized>(class: usize, size: u32, rng: &mut R) -> Result<RgbImage> {
    let n = size as usize;
    let mut px = vec![0u8; n * n * 3];
    let (a, b) = (color(rng), color(rng));
    match class % 3 {
        0 => {
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let freq = rng.gen_range(0.12..0.3);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let (c, s) = (theta.cos(), theta.sin());
            for y in 0..n {
                for x in 0..n {
                    let t = 0.5 + 0.5 * ((x as f64 * c + y as f64 * s) * freq * std::f64::consts::TAU + phase).sin();
                    for ch in 0..3 {
                        px[(y * n + x) * 3 + ch] = clamp8(a[ch] * t + b[ch] * (1.0 - t));
                    }
                }
            }
        }
        1 => {
            let cell = rng.gen_range(10..24usize);
            let (ox, oy) = (rng.gen_range(0..cell), rng.gen_range(0..cell));
            for y in 0..n {
                for x in 0..n {
                    let on = ((x + ox) / cell + (y + oy) / cell) % 2 == 0;
                    let c = if on { a } else { b };
                    for ch in 0..3 {
                        px[(y * n + x) * 3 + ch] = clamp8(c[ch]);
                    }
                }
            }
        }
        _ => {
            let sigma = rng.gen_range(12.0..30.0);
            let noise = Normal::new(0.0, sigma).expect("positive sigma");
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            for y in 0..n {
                for x in 0..n {
                    let t = 0.5 + 0.5 * ((x as f64 * dir.cos() + y as f64 * dir.sin()) / n as f64);
                    let e = noise.sample(rng);
                    for ch in 0..3 {
                        px[(y * n + x) * 3 + ch] = clamp8(a[ch] * t + b[ch] * (1.0 - t) + e);
                    }
                }
            }
        }
    }
    RgbImage::new(size, size, px)
}

/// Octave value noise with amplitude proportional to wavelength (a 1/f
/// spectrum, like natural photographs). Zero mean, roughly unit spread.
fn fractal_noise<R: Rng + ?Sized>(w: usize, h: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut total = 0.0;
    let mut cell = 64usize;
    while cell >= 2 {
        let (gw, gh) = (w / cell + 2, h / cell + 2);
        let grid: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let amp = cell as f64;
        for y in 0..h {
            let (gy, fy) = (y / cell, (y % cell) as f64 / cell as f64);
            for x in 0..w {
                let (gx, fx) = (x / cell, (x % cell) as f64 / cell as f64);
                let g = |i: usize, j: usize| grid[j * gw + i];
                let top = g(gx, gy) * (1.0 - fx) + g(gx + 1, gy) * fx;
                let bot = g(gx, gy + 1) * (1.0 - fx) + g(gx + 1, gy + 1) * fx;
                out[y * w + x] += amp * (top * (1.0 - fy) + bot * fy);
            }
        }
        total += amp;
        cell /= 2;
    }
    out.iter_mut().for_each(|v| *v /= total * 0.5);
    out
}

/// A photo-like scene: sky-to-ground gradient, textured shapes with shading
/// and a 1/f texture over everything, plus mild sensor noise.
pub fn natural_image<R: Rng + ?Sized>(width: u32, height: u32, rng: &mut R) -> Result<RgbImage> {
    let (w, h) = (width as usize, height as usize);
    let (top, bottom) = (color(rng), color(rng));
    let mut buf: Vec<[f64; 3]> = (0..w * h)
        .map(|i| {
            let t = (i / w) as f64 / h.max(1) as f64;
            std::array::from_fn(|c| top[c] * (1.0 - t) + bottom[c] * t)
        })
        .collect();
    for _ in 0..rng.gen_range(3..8) {
        let col = color(rng);
        let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let r = rng.gen_range(0.08..0.3) * w.min(h) as f64;
        let square = rng.gen_bool(0.4);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if square { dx.abs() < r && dy.abs() < r } else { dx * dx + dy * dy < r * r };
                if inside {
                    let shade = 1.0 - 0.3 * (dy / r).clamp(-1.0, 1.0);
                    buf[y * w + x] = std::array::from_fn(|c| col[c] * shade);
                }
            }
        }
    }
    let texture = fractal_noise(w, h, rng);
    let strength = rng.gen_range(10.0..40.0);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.7..1.0));
    let noise = Normal::new(0.0, 3.0).expect("positive sigma");
    let px = buf
        .iter()
        .zip(&texture)
        .flat_map(|(p, &t)| {
            let mut q = *p;
            for c in 0..3 {
                q[c] += strength * tint[c] * t + noise.sample(rng);
            }
            q
        })
        .map(clamp8)
        .collect();
    RgbImage::new(width, height, px)
}

/// `<dir>/<class>/<i>.png` for each texture class. Returns the written paths.
pub fn write_texture_corpus(dir: &Path, per_class: usize, size: u32, seed: u64) -> Result<Vec<PathBuf>> {
    let mut out = Vec::with_capacity(per_class * 3);
    for (c, name) in TEXTURE_CLASSES.iter().enumerate() {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| crate::Error::io(&sub, e))?;
        for i in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::training::mix_seed(seed, &[c as u64, i as u64]));
            let p = sub.join(format!("{i:04}.png"));
            texture_image(c, size, &mut rng)?.save(&p)?;
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = texture_image(1, 32, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = texture_image(1, 32, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.width(), 32);
        let n = natural_image(40, 24, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((n.width(), n.height()), (40, 24));
    }
}
