//! Random swap and random splice over block length sequences.
//!
//! Both act on whole block tokens by default. The global frequency vector is
//! never touched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BlockLengthSequence, FeatureSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Permute whole blocks.
    #[default]
    Token,
    /// Experimental: permute entries inside each block's 128-vector.
    Element,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub n_swaps: usize,
    pub p_splice: f64,
    pub seed: u64,
    pub granularity: Granularity,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            n_swaps: 2,
            p_splice: 0.5,
            seed: 0,
            granularity: Granularity::Token,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            n_swaps: 0,
            p_splice: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_splice) {
            return Err(Error::invalid(format!("p_splice {} not in [0,1]", self.p_splice)));
        }
        Ok(())
    }
}

/// Exchange two distinct positions, `n_swaps` times.
pub fn random_swap<T, R: Rng + ?Sized>(items: &mut [T], n_swaps: usize, rng: &mut R) -> Result<()> {
    if n_swaps == 0 {
        return Ok(());
    }
    let n = items.len();
    if n < 2 {
        return Err(Error::invalid(format!("random swap needs at least 2 items, got {n}")));
    }
    for _ in 0..n_swaps {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        items.swap(a, b);
    }
    Ok(())
}

/// Rotate left by `cut`: `items[cut..] ++ items[..cut]`.
pub fn splice_at<T>(items: &mut [T], cut: usize) {
    items.rotate_left(cut);
}

/// With probability `p`, cut at a uniform index in `1..n` and swap the halves.
/// Returns the cut used, if any.
pub fn random_splice<T, R: Rng + ?Sized>(items: &mut [T], p: f64, rng: &mut R) -> Option<usize> {
    let n = items.len();
    if n < 2 || p <= 0.0 || !rng.gen_bool(p.min(1.0)) {
        return None;
    }
    let cut = rng.gen_range(1..n);
    splice_at(items, cut);
    Some(cut)
}

/// One augmented view: swap then splice. Global features pass through.
pub fn augment_view<R: Rng + ?Sized>(fs: &FeatureSet, cfg: &AugmentConfig, rng: &mut R) -> Result<FeatureSet> {
    cfg.validate()?;
    let mut blocks: Vec<BlockLengthSequence> = fs.blocks.clone();
    match cfg.granularity {
        Granularity::Token => {
            random_swap(&mut blocks, cfg.n_swaps, rng)?;
            random_splice(&mut blocks, cfg.p_splice, rng);
        }
        Granularity::Element => {
            for b in &mut blocks {
                random_swap(&mut b[..], cfg.n_swaps, rng)?;
                random_splice(&mut b[..], cfg.p_splice, rng);
            }
        }
    }
    Ok(FeatureSet {
        image_id: fs.image_id.clone(),
        blocks,
        global: fs.global.clone(),
    })
}
