use rand::Rng;

use super::config::{FirstToken, ModelConfig};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::features::FeatureSet;

/// Role of a tensor, used for weight-decay selection and to skip buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    Embedding,
    /// Non-trainable (input statistics).
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }
}

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<F> {
    pub ln1: LayerNorm<F>,
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
    pub ln2: LayerNorm<F>,
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

/// FC → LN → ReLU → FC over the global frequency vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HuffmanEmbedding<F> {
    pub fc1: Linear<F>,
    pub ln: LayerNorm<F>,
    pub fc2: Linear<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputStats<F> {
    pub block_mean: Tensor<F>,
    pub block_std: Tensor<F>,
    pub global_mean: Tensor<F>,
    pub global_std: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub block_proj: Linear<F>,
    pub huffman: Option<HuffmanEmbedding<F>>,
    pub pos_emb: Tensor<F>,
    pub layers: Vec<EncoderLayer<F>>,
    pub head: Option<ProjectionHead<F>>,
    pub input_stats: Option<InputStats<F>>,
}

fn trunc_normal<F: Scalar, R: Rng + ?Sized>(dims: &[usize], std: f64, rng: &mut R) -> Tensor<F> {
    let n: usize = dims.iter().product();
    let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(normal);
            if z.abs() <= 2.0 {
                break F::of(z * std);
            }
        })
        .collect();
    Tensor::from_vec(dims, data)
}

impl<F: Scalar> Linear<F> {
    fn init<R: Rng + ?Sized>(inp: usize, out: usize, std: f64, rng: &mut R) -> Self {
        Linear {
            weight: trunc_normal(&[inp, out], std, rng),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims[1]
    }
}

impl<F: Scalar> LayerNorm<F> {
    fn init(d: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(&[d], F::one()),
            beta: Tensor::zeros(&[d]),
        }
    }
}

impl<F: Scalar> ModelParams<F> {
    /// Fresh parameters: truncated normal weights, zero biases, unit LN scales.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let s = config.init_std;
        let block_proj = Linear::init(config.in_dim, d, s, rng);
        let huffman = match config.first_token {
            FirstToken::Huffman => Some(HuffmanEmbedding {
                fc1: Linear::init(config.huff_dim, config.huff_hidden, s, rng),
                ln: LayerNorm::init(config.huff_hidden),
                fc2: Linear::init(config.huff_hidden, d, s, rng),
            }),
            FirstToken::Ones => None,
        };
        let pos_emb = trunc_normal(&[config.n_tokens(), d], s, rng);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer {
                ln1: LayerNorm::init(d),
                wq: Linear::init(d, d, s, rng),
                wk: Linear::init(d, d, s, rng),
                wv: Linear::init(d, d, s, rng),
                wo: Linear::init(d, d, s, rng),
                ln2: LayerNorm::init(d),
                fc1: Linear::init(d, config.mlp_hidden(), s, rng),
                fc2: Linear::init(config.mlp_hidden(), d, s, rng),
            })
            .collect();
        let head = config.projection_head.then(|| ProjectionHead {
            fc1: Linear::init(d, d, s, rng),
            fc2: Linear::init(d, d, s, rng),
        });
        let input_stats = config.standardize.then(|| InputStats {
            block_mean: Tensor::zeros(&[config.in_dim]),
            block_std: Tensor::filled(&[config.in_dim], F::one()),
            global_mean: Tensor::zeros(&[config.huff_dim]),
            global_std: Tensor::filled(&[config.huff_dim], F::one()),
        });
        Ok(ModelParams {
            config: config.clone(),
            block_proj,
            huffman,
            pos_emb,
            layers,
            head,
            input_stats,
        })
    }

    /// All tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, ParamKind, &Tensor<F>)> {
        let mut out = Vec::new();
        fn lin<'a, F>(out: &mut Vec<(String, ParamKind, &'a Tensor<F>)>, name: String, l: &'a Linear<F>) {
            out.push((format!("{name}.weight"), ParamKind::Weight, &l.weight));
            out.push((format!("{name}.bias"), ParamKind::Bias, &l.bias));
        }
        lin(&mut out, "block_proj".into(), &self.block_proj);
        if let Some(h) = &self.huffman {
            lin(&mut out, "huffman.fc1".into(), &h.fc1);
            out.push(("huffman.ln.gamma".into(), ParamKind::Norm, &h.ln.gamma));
            out.push(("huffman.ln.beta".into(), ParamKind::Norm, &h.ln.beta));
            lin(&mut out, "huffman.fc2".into(), &h.fc2);
        }
        out.push(("pos_emb".into(), ParamKind::Embedding, &self.pos_emb));
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.ln1.gamma"), ParamKind::Norm, &l.ln1.gamma));
            out.push((format!("{p}.ln1.beta"), ParamKind::Norm, &l.ln1.beta));
            lin(&mut out, format!("{p}.attn.q"), &l.wq);
            lin(&mut out, format!("{p}.attn.k"), &l.wk);
            lin(&mut out, format!("{p}.attn.v"), &l.wv);
            lin(&mut out, format!("{p}.attn.o"), &l.wo);
            out.push((format!("{p}.ln2.gamma"), ParamKind::Norm, &l.ln2.gamma));
            out.push((format!("{p}.ln2.beta"), ParamKind::Norm, &l.ln2.beta));
            lin(&mut out, format!("{p}.mlp.fc1"), &l.fc1);
            lin(&mut out, format!("{p}.mlp.fc2"), &l.fc2);
        }
        if let Some(h) = &self.head {
            lin(&mut out, "head.fc1".into(), &h.fc1);
            lin(&mut out, "head.fc2".into(), &h.fc2);
        }
        if let Some(s) = &self.input_stats {
            out.push(("input.block_mean".into(), ParamKind::Buffer, &s.block_mean));
            out.push(("input.block_std".into(), ParamKind::Buffer, &s.block_std));
            out.push(("input.global_mean".into(), ParamKind::Buffer, &s.global_mean));
            out.push(("input.global_std".into(), ParamKind::Buffer, &s.global_std));
        }
        out
    }

    /// Same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<F>)> {
        let mut out: Vec<(ParamKind, &mut Tensor<F>)> = Vec::new();
        fn lin<'a, F>(out: &mut Vec<(ParamKind, &'a mut Tensor<F>)>, l: &'a mut Linear<F>) {
            out.push((ParamKind::Weight, &mut l.weight));
            out.push((ParamKind::Bias, &mut l.bias));
        }
        lin(&mut out, &mut self.block_proj);
        if let Some(h) = &mut self.huffman {
            lin(&mut out, &mut h.fc1);
            out.push((ParamKind::Norm, &mut h.ln.gamma));
            out.push((ParamKind::Norm, &mut h.ln.beta));
            lin(&mut out, &mut h.fc2);
        }
        out.push((ParamKind::Embedding, &mut self.pos_emb));
        for l in &mut self.layers {
            out.push((ParamKind::Norm, &mut l.ln1.gamma));
            out.push((ParamKind::Norm, &mut l.ln1.beta));
            lin(&mut out, &mut l.wq);
            lin(&mut out, &mut l.wk);
            lin(&mut out, &mut l.wv);
            lin(&mut out, &mut l.wo);
            out.push((ParamKind::Norm, &mut l.ln2.gamma));
            out.push((ParamKind::Norm, &mut l.ln2.beta));
            lin(&mut out, &mut l.fc1);
            lin(&mut out, &mut l.fc2);
        }
        if let Some(h) = &mut self.head {
            lin(&mut out, &mut h.fc1);
            lin(&mut out, &mut h.fc2);
        }
        if let Some(s) = &mut self.input_stats {
            out.push((ParamKind::Buffer, &mut s.block_mean));
            out.push((ParamKind::Buffer, &mut s.block_std));
            out.push((ParamKind::Buffer, &mut s.global_mean));
            out.push((ParamKind::Buffer, &mut s.global_std));
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill_zero();
        }
        z
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        let lin = |l: &Linear<F>| Linear {
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        let ln = |l: &LayerNorm<F>| LayerNorm {
            gamma: l.gamma.cast(),
            beta: l.beta.cast(),
        };
        ModelParams {
            config: self.config.clone(),
            block_proj: lin(&self.block_proj),
            huffman: self.huffman.as_ref().map(|h| HuffmanEmbedding {
                fc1: lin(&h.fc1),
                ln: ln(&h.ln),
                fc2: lin(&h.fc2),
            }),
            pos_emb: self.pos_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    ln1: ln(&l.ln1),
                    wq: lin(&l.wq),
                    wk: lin(&l.wk),
                    wv: lin(&l.wv),
                    wo: lin(&l.wo),
                    ln2: ln(&l.ln2),
                    fc1: lin(&l.fc1),
                    fc2: lin(&l.fc2),
                })
                .collect(),
            head: self.head.as_ref().map(|h| ProjectionHead {
                fc1: lin(&h.fc1),
                fc2: lin(&h.fc2),
            }),
            input_stats: self.input_stats.as_ref().map(|s| InputStats {
                block_mean: s.block_mean.cast(),
                block_std: s.block_std.cast(),
                global_mean: s.global_mean.cast(),
                global_std: s.global_std.cast(),
            }),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|(_, k, _)| k.trainable())
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.all_finite())
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &ModelParams<F>) {
        let src = other.tensors();
        for ((_, dst), (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    pub fn scale(&mut self, s: F) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    /// Fill input statistics from a training set (mean, std with a floor of 1).
    pub fn fit_input_stats(&mut self, data: &[FeatureSet]) -> Result<()> {
        let Some(stats) = &mut self.input_stats else {
            return Err(Error::invalid("model was not configured with standardize=true"));
        };
        if data.is_empty() {
            return Err(Error::invalid("cannot fit input statistics on an empty set"));
        }
        let nb = stats.block_mean.len();
        let ng = stats.global_mean.len();
        let (mut bs, mut bss, mut nblk) = (vec![0f64; nb], vec![0f64; nb], 0f64);
        let (mut gs, mut gss) = (vec![0f64; ng], vec![0f64; ng]);
        for fs in data {
            for b in &fs.blocks {
                for (i, &v) in b.iter().enumerate() {
                    bs[i] += v as f64;
                    bss[i] += (v as f64).powi(2);
                }
                nblk += 1.0;
            }
            for (i, &v) in fs.global.as_slice().iter().enumerate() {
                gs[i] += v as f64;
                gss[i] += (v as f64).powi(2);
            }
        }
        let fill = |sum: &[f64], sq: &[f64], n: f64, mean: &mut Tensor<F>, std: &mut Tensor<F>| {
            for i in 0..sum.len() {
                let m = sum[i] / n;
                let var = (sq[i] / n - m * m).max(0.0);
                mean.data[i] = F::of(m);
                std.data[i] = F::of(var.sqrt().max(1.0));
            }
        };
        fill(&bs, &bss, nblk.max(1.0), &mut stats.block_mean, &mut stats.block_std);
        fill(&gs, &gss, data.len() as f64, &mut stats.global_mean, &mut stats.global_std);
        Ok(())
    }

    /// Convert features to model input, applying standardization if configured.
    pub fn prepare(&self, fs: &FeatureSet) -> Result<ModelInput<F>> {
        let cfg = &self.config;
        if fs.blocks.len() != cfg.n_blocks {
            return Err(Error::Mismatch(format!(
                "image {} has {} blocks, model expects {}",
                fs.image_id,
                fs.blocks.len(),
                cfg.n_blocks
            )));
        }
        if fs.global.as_slice().len() != cfg.huff_dim {
            return Err(Error::Mismatch(format!(
                "global vector has {} entries, model expects {}",
                fs.global.as_slice().len(),
                cfg.huff_dim
            )));
        }
        let mut blocks: Vec<F> = fs.blocks.iter().flat_map(|b| b.iter().map(|&v| F::of(v as f64))).collect();
        let mut global: Vec<F> = fs.global.as_slice().iter().map(|&v| F::of(v as f64)).collect();
        if let Some(s) = &self.input_stats {
            for row in blocks.chunks_mut(cfg.in_dim) {
                for (i, x) in row.iter_mut().enumerate() {
                    *x = (*x - s.block_mean.data[i]) / s.block_std.data[i];
                }
            }
            for (i, x) in global.iter_mut().enumerate() {
                *x = (*x - s.global_mean.data[i]) / s.global_std.data[i];
            }
        }
        Ok(ModelInput { blocks, global })
    }
}

/// Dense model input: `blocks` is `N × in_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<F> {
    pub blocks: Vec<F>,
    pub global: Vec<F>,
}
