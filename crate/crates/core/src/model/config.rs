use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BLOCK_DIM, GLOBAL_DIM};

/// What occupies token 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FirstToken {
    /// Learned embedding of the global Huffman frequency vector.
    #[default]
    Huffman,
    /// Constant all-ones row (plain class-token baseline).
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
    /// Block count N; the model sees N+1 tokens.
    pub n_blocks: usize,
    pub in_dim: usize,
    pub huff_dim: usize,
    pub huff_hidden: usize,
    pub first_token: FirstToken,
    pub projection_head: bool,
    /// Per-dimension input standardization from training-set statistics.
    pub standardize: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 6,
            dim: 128,
            heads: 4,
            mlp_ratio: 4,
            dropout: 0.1,
            n_blocks: 384,
            in_dim: BLOCK_DIM,
            huff_dim: GLOBAL_DIM,
            huff_hidden: 256,
            first_token: FirstToken::Huffman,
            projection_head: false,
            standardize: false,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn n_tokens(&self) -> usize {
        self.n_blocks + 1
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.layers == 0 {
            return bad("model needs at least one encoder layer".into());
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.mlp_ratio == 0 || self.huff_hidden == 0 {
            return bad("mlp_ratio and huff_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0,1)", self.dropout));
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be positive".into());
        }
        if self.in_dim != BLOCK_DIM || self.huff_dim != GLOBAL_DIM {
            return bad(format!(
                "input dims must be {BLOCK_DIM}/{GLOBAL_DIM}, got {}/{}",
                self.in_dim, self.huff_dim
            ));
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }
}
