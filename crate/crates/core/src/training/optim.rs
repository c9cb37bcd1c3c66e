use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamKind, Scalar, Tensor};

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to 0 at `total`.
pub fn lr_schedule(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    let t = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    0.5 * peak * (1.0 + (std::f64::consts::PI * t).cos())
}

/// `target ← m·target + (1−m)·online`, trainable tensors only.
pub fn momentum_update<F: Scalar>(target: &mut ModelParams<F>, online: &ModelParams<F>, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::invalid(format!("momentum {m} not in [0,1]")));
    }
    let src = online.tensors();
    let dst = target.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::Mismatch("momentum encoder layout differs".into()));
    }
    let (mf, rest) = (F::of(m), F::of(1.0 - m));
    for ((kind, t), (_, _, s)) in dst.into_iter().zip(src) {
        if t.dims != s.dims {
            return Err(Error::Mismatch("momentum encoder tensor shapes differ".into()));
        }
        if !kind.trainable() {
            t.data.copy_from_slice(&s.data);
            continue;
        }
        for (a, &b) in t.data.iter_mut().zip(&s.data) {
            *a = mf * *a + rest * b;
        }
    }
    Ok(())
}

/// SGD with heavy-ball momentum and L2 weight decay (`v ← μv + g + λp; p ← p − lr·v`).
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Also decay LayerNorm parameters and position embeddings.
    pub decay_all: bool,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64, decay_all: bool) -> Self {
        Sgd {
            momentum,
            weight_decay,
            decay_all,
            velocity: Vec::new(),
        }
    }

    fn decays(&self, kind: ParamKind) -> bool {
        match kind {
            ParamKind::Weight | ParamKind::Bias => true,
            ParamKind::Norm | ParamKind::Embedding => self.decay_all,
            ParamKind::Buffer => false,
        }
    }

    fn update(&self, p: &mut [f32], g: &[f32], v: &mut [f32], lr: f64, decay: bool) {
        let (mu, lr) = (self.momentum as f32, lr as f32);
        let wd = if decay { self.weight_decay as f32 } else { 0.0 };
        for ((pv, &gv), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vv = mu * *vv + gv + wd * *pv;
            *pv -= lr * *vv;
        }
    }

    /// One step over the model and any extra tensors (treated as weights).
    pub fn step(
        &mut self,
        params: &mut ModelParams<f32>,
        grads: &ModelParams<f32>,
        extra: &mut [(&mut Tensor<f32>, &Tensor<f32>)],
        lr: f64,
    ) {
        let gt = grads.tensors();
        let pt = params.tensors_mut();
        if self.velocity.is_empty() {
            self.velocity = pt.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.velocity.extend(extra.iter().map(|(t, _)| vec![0.0; t.len()]));
        }
        let mut vel = std::mem::take(&mut self.velocity);
        for (((kind, p), (_, _, g)), v) in pt.into_iter().zip(gt).zip(vel.iter_mut()) {
            if kind.trainable() {
                self.update(&mut p.data, &g.data, v, lr, self.decays(kind));
            }
        }
        let base = vel.len() - extra.len();
        for ((p, g), v) in extra.iter_mut().zip(vel[base..].iter_mut()) {
            self.update(&mut p.data, &g.data, v, lr, true);
        }
        self.velocity = vel;
    }
}

/// Global L2 norm over trainable gradients.
pub fn grad_norm(grads: &ModelParams<f32>) -> f64 {
    grads
        .tensors()
        .iter()
        .filter(|(_, k, _)| k.trainable())
        .flat_map(|(_, _, t)| t.data.iter())
        .map(|&g| (g as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_points() {
        let spe = 10;
        assert_eq!(lr_schedule(0, 20 * spe, 100 * spe, 1e-3), 0.0);
        assert!((lr_schedule(20 * spe, 20 * spe, 100 * spe, 1e-3) - 1e-3).abs() < 1e-15);
        assert!((lr_schedule(10 * spe, 20 * spe, 100 * spe, 1e-3) - 5e-4).abs() < 1e-15);
        assert!(lr_schedule(100 * spe - 1, 20 * spe, 100 * spe, 1e-3) < 1e-8);
        assert!(lr_schedule(100 * spe, 20 * spe, 100 * spe, 1e-3).abs() < 1e-18);
    }

    fn small() -> ModelConfig {
        ModelConfig {
            layers: 1,
            dim: 4,
            heads: 1,
            mlp_ratio: 1,
            n_blocks: 2,
            huff_hidden: 3,
            ..Default::default()
        }
    }

    #[test]
    fn momentum_extremes_and_scalar() {
        let a = ModelParams::<f32>::init(&small(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = ModelParams::<f32>::init(&small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut t = a.clone();
        momentum_update(&mut t, &b, 1.0).unwrap();
        assert_eq!(t, a);
        momentum_update(&mut t, &b, 0.0).unwrap();
        assert_eq!(t, b);

        let mut z = a.zeros_like();
        let mut one = a.zeros_like();
        for (_, t) in one.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 1.0);
        }
        momentum_update(&mut z, &one, 0.99).unwrap();
        assert!((z.pos_emb.data[0] - 0.01).abs() < 1e-7);
        // unrolled EMA over three steps
        momentum_update(&mut z, &one, 0.99).unwrap();
        momentum_update(&mut z, &one, 0.99).unwrap();
        assert!((z.pos_emb.data[0] as f64 - (1.0 - 0.99f64.powi(3))).abs() < 1e-6);
    }

    #[test]
    fn sgd_skips_decay_for_norms() {
        let mut p = ModelParams::<f32>::init(&small(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = p.zeros_like();
        let before = p.clone();
        let mut opt = Sgd::new(0.9, 0.5, false);
        opt.step(&mut p, &g, &mut [], 0.1);
        assert_eq!(p.pos_emb, before.pos_emb);
        assert_eq!(p.layers[0].ln1.gamma, before.layers[0].ln1.gamma);
        let w0 = before.block_proj.weight.data[0];
        assert!((p.block_proj.weight.data[0] - (w0 - 0.1 * 0.5 * w0)).abs() < 1e-7);
    }
}
