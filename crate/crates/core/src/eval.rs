//! Retrieval metrics (cosine ranking, AP@K, mAP@K) and cipher-image
//! security metrics (PSNR, histograms, NPCR, UACI).

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decompress, JpegEncoder, RgbImage};
use crate::crypto::{derive_keyset_for_image, encrypt_image, MasterSecret};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    /// Best first.
    pub items: Vec<(String, f64)>,
}

impl RankedResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(id, _)| id.as_str())
    }
}

/// Dot product accumulated in f64.
pub fn score(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Top-`k` rows of `vectors` (`ids.len() × dim`, unit norm) by cosine
/// similarity to `query`; ties go to the smaller id. `exclude` drops one id
/// (the query itself during evaluation).
pub fn rank_by_cosine(
    query_id: &str,
    query: &[f32],
    ids: &[String],
    vectors: &[f32],
    k: usize,
    exclude: Option<&str>,
) -> Result<RankedResult> {
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    if ids.is_empty() {
        return Err(Error::invalid("index is empty"));
    }
    let dim = query.len();
    if dim == 0 || vectors.len() != ids.len() * dim {
        return Err(Error::Mismatch(format!(
            "index holds {} values for {} ids, query has dimension {dim}",
            vectors.len(),
            ids.len()
        )));
    }
    let mut scored: Vec<(usize, f64)> = vectors
        .chunks(dim)
        .enumerate()
        .filter(|(i, _)| exclude != Some(ids[*i].as_str()))
        .map(|(i, v)| (i, score(query, v)))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(RankedResult {
        query_id: query_id.to_string(),
        items: scored.into_iter().map(|(i, s)| (ids[i].clone(), s)).collect(),
    })
}

/// How the AP normalizer `R_q` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RqMode {
    /// `min(total relevant, K)`.
    #[default]
    MinRelevantK,
    /// Number of relevant items actually retrieved in the top K.
    Retrieved,
    /// Total number of relevant items in the database.
    AllRelevant,
}

/// `AP@K = (1/R_q) Σ_{k≤K} P(k)·rel(k)`.
pub fn ap_at_k<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<&str>, k: usize, r_q: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::invalid("relevant set is empty"));
    }
    if r_q == 0 {
        return Err(Error::invalid("R_q must be at least 1"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().take(k).enumerate() {
        if relevant.contains(id.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / r_q as f64)
}

pub fn r_q(mode: RqMode, ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> usize {
    match mode {
        RqMode::MinRelevantK => relevant.len().min(k),
        RqMode::AllRelevant => relevant.len(),
        RqMode::Retrieved => ranked.iter().take(k).filter(|id| relevant.contains(*id)).count().max(1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub k: usize,
    pub map: f64,
    pub per_query: Vec<(String, f64)>,
    /// Queries with no other item of their class (skipped).
    pub skipped: Vec<String>,
}

pub fn map_at_k(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::invalid("mAP needs at least one query"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Every item queries all others; relevance is equal label.
pub fn evaluate_map(ids: &[String], vectors: &[f32], labels: &[String], k: usize, mode: RqMode) -> Result<MapReport> {
    if ids.len() != labels.len() {
        return Err(Error::Mismatch(format!("{} ids but {} labels", ids.len(), labels.len())));
    }
    if ids.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let dim = vectors.len() / ids.len();
    let results: Vec<(String, Option<f64>)> = (0..ids.len())
        .into_par_iter()
        .map(|q| {
            let relevant: HashSet<&str> = (0..ids.len())
                .filter(|&j| j != q && labels[j] == labels[q])
                .map(|j| ids[j].as_str())
                .collect();
            if relevant.is_empty() {
                return Ok((ids[q].clone(), None));
            }
            let ranked = rank_by_cosine(&ids[q], &vectors[q * dim..(q + 1) * dim], ids, vectors, k, Some(&ids[q]))?;
            let list: Vec<&str> = ranked.ids().collect();
            let rq = r_q(mode, &list, &relevant, k);
            Ok((ids[q].clone(), Some(ap_at_k(&list, &relevant, k, rq)?)))
        })
        .collect::<Result<_>>()?;
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    for (id, ap) in results {
        match ap {
            Some(a) => per_query.push((id, a)),
            None => skipped.push(id),
        }
    }
    let aps: Vec<f64> = per_query.iter().map(|(_, a)| *a).collect();
    Ok(MapReport {
        k,
        map: map_at_k(&aps)?,
        per_query,
        skipped,
    })
}

/// PSNR in dB, or `None` when the inputs are identical.
pub type Psnr = Option<f64>;

fn same_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Mismatch(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn psnr_from_sq(sum_sq: f64, n: usize) -> Psnr {
    (sum_sq > 0.0).then(|| 10.0 * (255.0f64.powi(2) / (sum_sq / n as f64)).log10())
}

/// PSNR over all three RGB channels.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<Psnr> {
    same_dims(a, b)?;
    let sq: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(psnr_from_sq(sq, a.pixels().len()))
}

fn luma(p: &[u8]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// PSNR of the (unrounded) BT.601 luma planes.
pub fn psnr_luma(a: &RgbImage, b: &RgbImage) -> Result<Psnr> {
    same_dims(a, b)?;
    let sq: f64 = a
        .pixels()
        .chunks(3)
        .zip(b.pixels().chunks(3))
        .map(|(x, y)| (luma(x) - luma(y)).powi(2))
        .sum();
    Ok(psnr_from_sq(sq, a.pixels().len() / 3))
}

/// Per-channel NPCR in percent, averaged over R, G, B.
pub fn npcr(c1: &RgbImage, c2: &RgbImage) -> Result<f64> {
    same_dims(c1, c2)?;
    let n = c1.pixels().len() / 3;
    let mut diff = [0usize; 3];
    for (p, q) in c1.pixels().chunks(3).zip(c2.pixels().chunks(3)) {
        for ch in 0..3 {
            diff[ch] += (p[ch] != q[ch]) as usize;
        }
    }
    Ok(diff.iter().map(|&d| 100.0 * d as f64 / n as f64).sum::<f64>() / 3.0)
}

/// Per-channel UACI in percent, averaged over R, G, B.
pub fn uaci(c1: &RgbImage, c2: &RgbImage) -> Result<f64> {
    same_dims(c1, c2)?;
    let n = c1.pixels().len() / 3;
    let mut acc = [0f64; 3];
    for (p, q) in c1.pixels().chunks(3).zip(c2.pixels().chunks(3)) {
        for ch in 0..3 {
            acc[ch] += (p[ch] as f64 - q[ch] as f64).abs() / 255.0;
        }
    }
    Ok(acc.iter().map(|&a| 100.0 * a / n as f64).sum::<f64>() / 3.0)
}

/// Single-channel NPCR over raw sample buffers.
pub fn npcr_plane(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Mismatch("planes differ in size or are empty".into()));
    }
    Ok(100.0 * a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64)
}

pub type Histogram = [[u64; 256]; 3];

pub fn histogram(img: &RgbImage) -> Histogram {
    let mut h = [[0u64; 256]; 3];
    for p in img.pixels().chunks(3) {
        for ch in 0..3 {
            h[ch][p[ch] as usize] += 1;
        }
    }
    h
}

/// Max bin over mean bin, averaged over channels (1 = perfectly flat).
pub fn histogram_peak_ratio(h: &Histogram) -> f64 {
    h.iter()
        .map(|c| {
            let total: u64 = c.iter().sum();
            let max = *c.iter().max().unwrap_or(&0);
            if total == 0 {
                0.0
            } else {
                max as f64 / (total as f64 / 256.0)
            }
        })
        .sum::<f64>()
        / 3.0
}

/// Encrypt and decode without decrypting: what an observer of the cipher sees.
pub fn cipher_view(img: &RgbImage, master: &MasterSecret, encoder: &JpegEncoder) -> Result<RgbImage> {
    let keys = derive_keyset_for_image(img, master)?;
    decompress(encrypt_image(img, &keys, encoder)?.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferentialResult {
    pub npcr: f64,
    pub uaci: f64,
}

/// Change one random pixel by ±1 in one channel and compare the two decoded
/// cipher images. With `adaptive = false` both use the original image's keys.
pub fn differential_attack_trial<R: Rng + ?Sized>(
    img: &RgbImage,
    master: &MasterSecret,
    encoder: &JpegEncoder,
    adaptive: bool,
    rng: &mut R,
) -> Result<DifferentialResult> {
    let mut other = img.clone();
    let (x, y) = (rng.gen_range(0..img.width()), rng.gen_range(0..img.height()));
    let ch = rng.gen_range(0..3usize);
    let mut p = other.pixel(x, y);
    p[ch] = match p[ch] {
        0 => 1,
        255 => 254,
        v if rng.gen_bool(0.5) => v + 1,
        v => v - 1,
    };
    other.set_pixel(x, y, p);
    let k1 = derive_keyset_for_image(img, master)?;
    let k2 = if adaptive {
        derive_keyset_for_image(&other, master)?
    } else {
        k1.clone()
    };
    let c1 = decompress(encrypt_image(img, &k1, encoder)?.as_bytes())?;
    let c2 = decompress(encrypt_image(&other, &k2, encoder)?.as_bytes())?;
    Ok(DifferentialResult {
        npcr: npcr(&c1, &c2)?,
        uaci: uaci(&c1, &c2)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCryptoStats {
    pub id: String,
    /// `None` when cipher and plain are identical.
    pub psnr_luma_db: Psnr,
    pub psnr_rgb_db: Psnr,
    pub plain_peak_ratio: f64,
    pub cipher_peak_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CryptoReport {
    pub images: Vec<ImageCryptoStats>,
    pub mean_psnr_luma_db: Option<f64>,
    pub mean_psnr_rgb_db: Option<f64>,
    pub npcr_percent: Option<f64>,
    pub uaci_percent: Option<f64>,
    pub differential_trials: usize,
    pub key_space: String,
}

pub const KEY_SPACE: &str = "six 256-bit keys (2^1536)";

pub fn image_crypto_stats(id: &str, plain: &RgbImage, cipher: &RgbImage) -> Result<ImageCryptoStats> {
    Ok(ImageCryptoStats {
        id: id.to_string(),
        psnr_luma_db: psnr_luma(plain, cipher)?,
        psnr_rgb_db: psnr(plain, cipher)?,
        plain_peak_ratio: histogram_peak_ratio(&histogram(plain)),
        cipher_peak_ratio: histogram_peak_ratio(&histogram(cipher)),
    })
}

/// Aggregate per-image stats and differential trials into one report.
pub fn crypto_report(images: Vec<ImageCryptoStats>, trials: &[DifferentialResult]) -> CryptoReport {
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    CryptoReport {
        mean_psnr_luma_db: mean(images.iter().filter_map(|s| s.psnr_luma_db).collect()),
        mean_psnr_rgb_db: mean(images.iter().filter_map(|s| s.psnr_rgb_db).collect()),
        npcr_percent: mean(trials.iter().map(|t| t.npcr).collect()),
        uaci_percent: mean(trials.iter().map(|t| t.uaci).collect()),
        differential_trials: trials.len(),
        images,
        key_space: KEY_SPACE.to_string(),
    }
}
