//! Transformer encoder over block length sequences, with token 0 taken from
//! a learned embedding of the global Huffman frequency vector.
//!
//! Everything is written out by hand: each forward returns a cache and
//! `backward` turns an upstream gradient on the representation into a full
//! set of parameter gradients. Generic over `f32` and `f64`.

pub mod config;
pub mod layers;
pub mod params;
pub mod tensor;

use rand::RngCore;

pub use config::{FirstToken, ModelConfig};
pub use params::{
    EncoderLayer, HuffmanEmbedding, InputStats, LayerNorm, Linear, ModelInput, ModelParams, ParamKind,
    ProjectionHead,
};
pub use tensor::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use layers::*;

pub struct HuffmanCache<F> {
    ln: LnCache<F>,
    relu: Vec<F>,
}

pub struct LayerCache<F> {
    t: usize,
    tq: usize,
    a: Vec<F>,
    ln1: LnCache<F>,
    attn: AttnCache<F>,
    mask1: Option<Vec<F>>,
    ln2: LnCache<F>,
    b: Vec<F>,
    u: Vec<F>,
    g: Vec<F>,
    mask2: Option<Vec<F>>,
}

pub struct HeadCache<F> {
    v: Vec<F>,
    relu: Vec<F>,
}

/// Everything `backward` needs from one forward pass.
pub struct ForwardCache<F> {
    input: ModelInput<F>,
    huffman: Option<HuffmanCache<F>>,
    mask0: Option<Vec<F>>,
    layers: Vec<LayerCache<F>>,
    head: Option<HeadCache<F>>,
}

/// `He = FC(ReLU(LN(FC(g))))`
pub fn huffman_embedding<F: Scalar>(h: &HuffmanEmbedding<F>, global: &[F]) -> Result<(Vec<F>, HuffmanCache<F>)> {
    if global.len() != h.fc1.in_dim() {
        return Err(Error::Mismatch(format!(
            "global vector has {} entries, embedding expects {}",
            global.len(),
            h.fc1.in_dim()
        )));
    }
    let h1 = linear_forward(&h.fc1, global, 1);
    let (n, ln) = layer_norm_forward(&h.ln, &h1, 1);
    let relu: Vec<F> = n.iter().map(|&x| x.max(F::zero())).collect();
    let out = linear_forward(&h.fc2, &relu, 1);
    Ok((out, HuffmanCache { ln, relu }))
}

fn huffman_embedding_backward<F: Scalar>(
    h: &HuffmanEmbedding<F>,
    g: &mut HuffmanEmbedding<F>,
    cache: &HuffmanCache<F>,
    global: &[F],
    dout: &[F],
) {
    let mut dr = linear_backward(&h.fc2, &mut g.fc2, &cache.relu, dout, 1, true).expect("dx requested");
    for (d, &r) in dr.iter_mut().zip(&cache.relu) {
        if r <= F::zero() {
            *d = F::zero();
        }
    }
    let dh1 = layer_norm_backward(&h.ln, &mut g.ln, &cache.ln, &dr, 1);
    linear_backward(&h.fc1, &mut g.fc1, global, &dh1, 1, false);
}

/// One pre-norm encoder layer on `t` rows; only the first `tq` rows are produced.
pub fn encoder_layer_forward<F: Scalar, R: RngCore + ?Sized>(
    layer: &EncoderLayer<F>,
    x: &[F],
    t: usize,
    tq: usize,
    heads: usize,
    dropout: f64,
    mut rng: Option<&mut R>,
) -> (Vec<F>, LayerCache<F>) {
    let d = layer.ln1.gamma.len();
    let (a, ln1) = layer_norm_forward(&layer.ln1, x, t);
    let w = AttnWeights {
        wq: &layer.wq,
        wk: &layer.wk,
        wv: &layer.wv,
        wo: &layer.wo,
    };
    let (mut m, attn) = attention_forward(&w, &a, t, tq, heads);
    let mask1 = dropout_mask(tq * d, dropout, rng.as_deref_mut());
    apply_mask(&mut m, &mask1);
    let mut x1 = x[..tq * d].to_vec();
    for (v, &mv) in x1.iter_mut().zip(&m) {
        *v += mv;
    }
    let (b, ln2) = layer_norm_forward(&layer.ln2, &x1, tq);
    let u = linear_forward(&layer.fc1, &b, tq);
    let g: Vec<F> = u.iter().map(|&v| gelu(v)).collect();
    let mut f = linear_forward(&layer.fc2, &g, tq);
    let mask2 = dropout_mask(tq * d, dropout, rng);
    apply_mask(&mut f, &mask2);
    for (v, &fv) in x1.iter_mut().zip(&f) {
        *v += fv;
    }
    (
        x1,
        LayerCache {
            t,
            tq,
            a,
            ln1,
            attn,
            mask1,
            ln2,
            b,
            u,
            g,
            mask2,
        },
    )
}

/// Gradient w.r.t. the layer input (`t × D`) given the gradient on its `tq` output rows.
pub fn encoder_layer_backward<F: Scalar>(
    layer: &EncoderLayer<F>,
    grad: &mut EncoderLayer<F>,
    cache: &LayerCache<F>,
    dout: &[F],
    heads: usize,
) -> Vec<F> {
    let d = layer.ln1.gamma.len();
    let (t, tq) = (cache.t, cache.tq);
    let mut dx1 = dout.to_vec();
    let mut df = dout.to_vec();
    apply_mask(&mut df, &cache.mask2);
    let mut dg = linear_backward(&layer.fc2, &mut grad.fc2, &cache.g, &df, tq, true).expect("dx requested");
    for (v, &u) in dg.iter_mut().zip(&cache.u) {
        *v *= gelu_grad(u);
    }
    let db = linear_backward(&layer.fc1, &mut grad.fc1, &cache.b, &dg, tq, true).expect("dx requested");
    let dres = layer_norm_backward(&layer.ln2, &mut grad.ln2, &cache.ln2, &db, tq);
    for (v, &r) in dx1.iter_mut().zip(&dres) {
        *v += r;
    }
    let mut dm = dx1.clone();
    apply_mask(&mut dm, &cache.mask1);
    let w = AttnWeights {
        wq: &layer.wq,
        wk: &layer.wk,
        wv: &layer.wv,
        wo: &layer.wo,
    };
    let g = AttnGrads {
        wq: &mut grad.wq,
        wk: &mut grad.wk,
        wv: &mut grad.wv,
        wo: &mut grad.wo,
    };
    let da = attention_backward(&w, g, &cache.attn, &cache.a, &dm, t, heads);
    let mut dx = layer_norm_backward(&layer.ln1, &mut grad.ln1, &cache.ln1, &da, t);
    for (v, &r) in dx[..tq * d].iter_mut().zip(&dx1) {
        *v += r;
    }
    dx
}

impl<F: Scalar> ModelParams<F> {
    /// `(N+1) × D` token matrix: token 0 from the global vector, then the
    /// projected blocks, plus position embeddings.
    pub fn assemble_tokens(&self, input: &ModelInput<F>) -> Result<(Vec<F>, Option<HuffmanCache<F>>)> {
        let cfg = &self.config;
        let d = cfg.dim;
        if input.blocks.len() != cfg.n_blocks * cfg.in_dim {
            return Err(Error::Mismatch(format!(
                "block input has {} values, expected {} x {}",
                input.blocks.len(),
                cfg.n_blocks,
                cfg.in_dim
            )));
        }
        let (first, hc) = match &self.huffman {
            Some(h) => {
                let (e, c) = huffman_embedding(h, &input.global)?;
                (e, Some(c))
            }
            None => (vec![F::one(); d], None),
        };
        let mut tokens = first;
        tokens.extend(linear_forward(&self.block_proj, &input.blocks, cfg.n_blocks));
        for (v, &p) in tokens.iter_mut().zip(&self.pos_emb.data) {
            *v += p;
        }
        Ok((tokens, hc))
    }

    /// Representation `v_L^0` (through the projection head if enabled).
    /// Passing an RNG turns on dropout.
    pub fn forward(&self, input: &ModelInput<F>, mut rng: Option<&mut dyn RngCore>) -> Result<(Vec<F>, ForwardCache<F>)> {
        let cfg = &self.config;
        let (d, t) = (cfg.dim, cfg.n_tokens());
        if self.layers.len() != cfg.layers {
            return Err(Error::Mismatch("layer count differs from config".into()));
        }
        let (mut x, huffman) = self.assemble_tokens(input)?;
        let mask0 = dropout_mask(t * d, cfg.dropout, rng.as_deref_mut());
        apply_mask(&mut x, &mask0);
        let mut caches = Vec::with_capacity(cfg.layers);
        for (i, layer) in self.layers.iter().enumerate() {
            let rows = x.len() / d;
            // only row 0 is read after the last layer
            let tq = if i + 1 == cfg.layers { 1 } else { rows };
            let (y, c) = encoder_layer_forward(layer, &x, rows, tq, cfg.heads, cfg.dropout, rng.as_deref_mut());
            caches.push(c);
            x = y;
        }
        let (out, head) = match &self.head {
            Some(h) => {
                let u = linear_forward(&h.fc1, &x, 1);
                let relu: Vec<F> = u.iter().map(|&v| v.max(F::zero())).collect();
                let z = linear_forward(&h.fc2, &relu, 1);
                (z, Some(HeadCache { v: x, relu }))
            }
            None => (x, None),
        };
        Ok((
            out,
            ForwardCache {
                input: input.clone(),
                huffman,
                mask0,
                layers: caches,
                head,
            },
        ))
    }

    /// Parameter gradients for upstream gradient `dout` on the representation.
    pub fn backward(&self, cache: &ForwardCache<F>, dout: &[F]) -> Result<ModelParams<F>> {
        let cfg = &self.config;
        let d = cfg.dim;
        if dout.len() != d {
            return Err(Error::Mismatch(format!("upstream gradient has {} entries, expected {d}", dout.len())));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Mismatch("cache does not belong to this model".into()));
        }
        let mut grad = self.zeros_like();
        let mut dx = match (&self.head, &cache.head, &mut grad.head) {
            (Some(h), Some(hc), Some(gh)) => {
                let mut dr = linear_backward(&h.fc2, &mut gh.fc2, &hc.relu, dout, 1, true).expect("dx requested");
                for (v, &r) in dr.iter_mut().zip(&hc.relu) {
                    if r <= F::zero() {
                        *v = F::zero();
                    }
                }
                linear_backward(&h.fc1, &mut gh.fc1, &hc.v, &dr, 1, true).expect("dx requested")
            }
            (None, None, None) => dout.to_vec(),
            _ => return Err(Error::Mismatch("cache does not belong to this model".into())),
        };
        for i in (0..self.layers.len()).rev() {
            dx = encoder_layer_backward(&self.layers[i], &mut grad.layers[i], &cache.layers[i], &dx, cfg.heads);
        }
        apply_mask(&mut dx, &cache.mask0);
        grad.pos_emb.data.copy_from_slice(&dx);
        linear_backward(&self.block_proj, &mut grad.block_proj, &cache.input.blocks, &dx[d..], cfg.n_blocks, false);
        if let (Some(h), Some(hc), Some(gh)) = (&self.huffman, &cache.huffman, &mut grad.huffman) {
            huffman_embedding_backward(h, gh, hc, &cache.input.global, &dx[..d]);
        }
        Ok(grad)
    }

    /// Eval-mode representation of a feature set.
    pub fn represent(&self, fs: &FeatureSet) -> Result<Vec<F>> {
        let input = self.prepare(fs)?;
        Ok(self.forward(&input, None)?.0)
    }

    /// Eval-mode, L2-normalized representation as f32.
    pub fn embed(&self, fs: &FeatureSet) -> Result<Vec<f32>> {
        let v = self.represent(fs)?;
        let norm = v.iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical(format!("representation of {} has norm {norm}", fs.image_id)));
        }
        Ok(v.iter().map(|x| (x.f64() / norm) as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::HuffFreqVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(first: FirstToken, head: bool) -> ModelConfig {
        ModelConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            mlp_ratio: 2,
            dropout: 0.1,
            n_blocks: 4,
            huff_hidden: 6,
            first_token: first,
            projection_head: head,
            init_std: 0.3,
            ..Default::default()
        }
    }

    fn features(rng: &mut ChaCha8Rng, n: usize) -> FeatureSet {
        FeatureSet {
            image_id: "t".into(),
            blocks: (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0..8))).collect(),
            global: HuffFreqVector((0..522).map(|_| rng.gen_range(0..5)).collect()),
        }
    }

    #[test]
    fn zero_global_gives_zero_embedding() {
        let cfg = tiny(FirstToken::Huffman, false);
        let p = ModelParams::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (e, _) = huffman_embedding(p.huffman.as_ref().unwrap(), &vec![0.0; 522]).unwrap();
        assert_eq!(e.len(), 8);
        assert!(e.iter().all(|&v| v == 0.0));
        assert!(huffman_embedding(p.huffman.as_ref().unwrap(), &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_output_projections_make_layers_identity() {
        let cfg = tiny(FirstToken::Huffman, false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::<f64>::init(&cfg, &mut rng).unwrap();
        for l in &mut p.layers {
            l.wo.weight.fill_zero();
            l.fc2.weight.fill_zero();
        }
        let input = p.prepare(&features(&mut rng, 4)).unwrap();
        let (tokens, _) = p.assemble_tokens(&input).unwrap();
        let (out, _) = p.forward(&input, None).unwrap();
        assert_eq!(out, tokens[..8].to_vec());
    }

    #[test]
    fn eval_deterministic_train_stochastic() {
        let cfg = tiny(FirstToken::Huffman, true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::<f32>::init(&cfg, &mut rng).unwrap();
        let fs = features(&mut rng, 4);
        assert_eq!(p.represent(&fs).unwrap(), p.represent(&fs).unwrap());
        let input = p.prepare(&fs).unwrap();
        let a = p.forward(&input, Some(&mut rng)).unwrap().0;
        let b = p.forward(&input, Some(&mut rng)).unwrap().0;
        assert_ne!(a, b);
        assert!(p.prepare(&features(&mut rng, 5)).is_err());
    }

    #[test]
    fn ones_token_changes_representation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fs = features(&mut rng, 4);
        let a = ModelParams::<f64>::init(&tiny(FirstToken::Huffman, false), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = ModelParams::<f64>::init(&tiny(FirstToken::Ones, false), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_ne!(a.represent(&fs).unwrap(), b.represent(&fs).unwrap());
    }

    fn loss_of(p: &ModelParams<f64>, input: &ModelInput<f64>, w: &[f64], seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, _) = p.forward(input, Some(&mut rng)).unwrap();
        out.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (first, head) in [(FirstToken::Huffman, false), (FirstToken::Ones, true)] {
            let cfg = tiny(first, head);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let p = ModelParams::<f64>::init(&cfg, &mut rng).unwrap();
            let input = p.prepare(&features(&mut rng, 4)).unwrap();
            let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, cache) = p.forward(&input, Some(&mut ChaCha8Rng::seed_from_u64(77))).unwrap();
            let g = p.backward(&cache, &w).unwrap();
            let names: Vec<_> = p.tensors().into_iter().map(|(n, _, t)| (n, t.len())).collect();
            let grads: Vec<Vec<f64>> = g.tensors().into_iter().map(|(_, _, t)| t.data.clone()).collect();
            for (ti, (name, len)) in names.iter().enumerate() {
                for j in (0..*len).step_by((*len / 7).max(1)) {
                    let h = 1e-6;
                    let mut pp = p.clone();
                    pp.tensors_mut()[ti].1.data[j] += h;
                    let mut pm = p.clone();
                    pm.tensors_mut()[ti].1.data[j] -= h;
                    let fd = (loss_of(&pp, &input, &w, 77) - loss_of(&pm, &input, &w, 77)) / (2.0 * h);
                    let an = grads[ti][j];
                    let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
                    assert!(err < 1e-5, "{name}[{j}]: analytic {an} vs fd {fd}");
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = tiny(FirstToken::Huffman, false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::<f32>::init(&cfg, &mut rng).unwrap();
        let input = p.prepare(&features(&mut rng, 4)).unwrap();
        let (_, cache) = p.forward(&input, Some(&mut rng)).unwrap();
        let g = p.backward(&cache, &[0.0; 8]).unwrap();
        for ((_, _, a), (_, _, b)) in g.tensors().into_iter().zip(p.tensors()) {
            assert_eq!(a.dims, b.dims);
            assert!(a.data.iter().all(|&v| v == 0.0));
        }
    }
}
