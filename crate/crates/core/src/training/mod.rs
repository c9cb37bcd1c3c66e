//! Momentum-contrast pre-training and ArcFace fine-tuning.
//!
//! Per-sample work (augmentation, forward, backward) runs on rayon; the
//! gradients are summed in sample order so a seed fixes the loss trace
//! bit for bit regardless of thread count.

pub mod loss;
pub mod optim;
pub mod queue;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use loss::{arcface_loss, info_nce, l2_normalize, l2_normalize_backward, ArcFaceHead, ArcFaceOutput, InfoNce};
pub use optim::{grad_norm, lr_schedule, momentum_update, Sgd};
pub use queue::NegativeQueue;

use crate::augment::{augment_view, AugmentConfig};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::model::{ModelConfig, ModelInput, ModelParams, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    /// Momentum-encoder EMA factor.
    pub m: f64,
    pub queue_size: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub weight_decay: f64,
    pub sgd_momentum: f64,
    pub seed: u64,
    /// Use the other samples' keys in the batch as extra negatives.
    pub in_batch_negatives: bool,
    /// Apply weight decay to LayerNorm and position embeddings too.
    pub decay_all: bool,
    /// Clip the global gradient norm; off when `None`.
    pub grad_clip: Option<f64>,
    pub arcface_scale: f64,
    pub arcface_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::unsupervised()
    }
}

impl TrainConfig {
    pub fn unsupervised() -> Self {
        TrainConfig {
            tau: 0.1,
            m: 0.99,
            queue_size: 1022,
            batch_size: 14,
            lr_peak: 1e-3,
            warmup_epochs: 20,
            total_epochs: 200,
            weight_decay: 5e-5,
            sgd_momentum: 0.9,
            seed: 0,
            in_batch_negatives: true,
            decay_all: false,
            grad_clip: None,
            arcface_scale: 32.0,
            arcface_margin: 0.1,
        }
    }

    pub fn supervised() -> Self {
        TrainConfig {
            batch_size: 35,
            total_epochs: 100,
            ..TrainConfig::unsupervised()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.m) {
            return bad(format!("m must be in [0,1], got {}", self.m));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.total_epochs == 0 || self.warmup_epochs > self.total_epochs {
            return bad("need total_epochs > 0 and warmup_epochs <= total_epochs".into());
        }
        if !(self.lr_peak >= 0.0) || !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.sgd_momentum) {
            return bad("lr_peak, weight_decay must be >= 0 and sgd_momentum in [0,1)".into());
        }
        if !(self.arcface_scale > 0.0) || !self.arcface_margin.is_finite() {
            return bad("arcface_scale must be positive and arcface_margin finite".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive".into());
            }
        }
        Ok(())
    }

    /// Extra checks for contrastive training.
    pub fn validate_queue(&self) -> Result<()> {
        if self.queue_size == 0 || !self.queue_size.is_multiple_of(self.batch_size) {
            return Err(Error::Invalid(format!(
                "queue_size {} must be a positive multiple of batch_size {}",
                self.queue_size, self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

/// Called after every epoch with the current parameters (and head when supervised).
pub type Observer<'a> = dyn FnMut(&EpochStats, &ModelParams<f32>, Option<&ArcFaceHead<f32>>) -> Result<()> + 'a;

pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub head: Option<ArcFaceHead<f32>>,
    pub history: Vec<EpochStats>,
}

/// SplitMix64 over a sequence of words; used to derive per-sample seeds.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts.iter().chain(std::iter::once(&0x5eed)) {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn sum_grads<F: Scalar>(mut grads: Vec<ModelParams<F>>) -> ModelParams<F> {
    let mut total = grads.remove(0);
    for g in &grads {
        total.accumulate(g);
    }
    total
}

fn forward_unit<F: Scalar>(
    params: &ModelParams<F>,
    input: &ModelInput<F>,
    seed: Option<u64>,
) -> Result<(Vec<F>, F, crate::model::ForwardCache<F>)> {
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let (h, cache) = params.forward(input, rng.as_mut().map(|r| r as &mut dyn rand::RngCore))?;
    let (u, n) = l2_normalize(&h)?;
    Ok((u, n, cache))
}

/// Mean InfoNCE over a batch of query inputs and the gradient for `params`.
///
/// `keys[i]` is the (stop-gradient) positive for query `i`; `negatives` is the
/// queue content. With `in_batch`, every other key in the batch is also a
/// negative. `dropout_seeds` enables train-mode dropout with fixed masks.
pub fn contrastive_batch<F: Scalar>(
    params: &ModelParams<F>,
    queries: &[ModelInput<F>],
    keys: &[Vec<F>],
    negatives: &[Vec<F>],
    tau: f64,
    in_batch: bool,
    dropout_seeds: Option<&[u64]>,
) -> Result<(F, ModelParams<F>)> {
    let b = queries.len();
    if b == 0 || keys.len() != b || dropout_seeds.is_some_and(|s| s.len() != b) {
        return Err(Error::Mismatch("contrastive batch sizes disagree".into()));
    }
    let scale = F::one() / F::of(b as f64);
    let per: Vec<(F, ModelParams<F>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let (q, norm, cache) = forward_unit(params, &queries[i], dropout_seeds.map(|s| s[i]))?;
            let mut negs: Vec<&[F]> = negatives.iter().map(|v| v.as_slice()).collect();
            if in_batch {
                negs.extend((0..b).filter(|&j| j != i).map(|j| keys[j].as_slice()));
            }
            let out = info_nce(&q, &keys[i], &negs, tau)?;
            let mut dh = l2_normalize_backward(&q, norm, &out.d_query);
            dh.iter_mut().for_each(|v| *v *= scale);
            Ok((out.loss, params.backward(&cache, &dh)?))
        })
        .collect::<Result<_>>()?;
    let loss = per.iter().map(|(l, _)| *l).fold(F::zero(), |a, l| a + l) * scale;
    Ok((loss, sum_grads(per.into_iter().map(|(_, g)| g).collect())))
}

/// Mean ArcFace loss over a batch, with gradients for the backbone and the centers.
pub fn arcface_batch<F: Scalar>(
    params: &ModelParams<F>,
    head: &ArcFaceHead<F>,
    inputs: &[ModelInput<F>],
    labels: &[usize],
    dropout_seeds: Option<&[u64]>,
) -> Result<(F, ModelParams<F>, Tensor<F>)> {
    let b = inputs.len();
    if b == 0 || labels.len() != b || dropout_seeds.is_some_and(|s| s.len() != b) {
        return Err(Error::Mismatch("supervised batch sizes disagree".into()));
    }
    let fwd: Vec<_> = (0..b)
        .into_par_iter()
        .map(|i| forward_unit(params, &inputs[i], dropout_seeds.map(|s| s[i])))
        .collect::<Result<_>>()?;
    let feats: Vec<Vec<F>> = fwd.iter().map(|(u, _, _)| u.clone()).collect();
    let out = arcface_loss(&feats, labels, head)?;
    let grads: Vec<ModelParams<F>> = fwd
        .par_iter()
        .zip(out.d_features.par_iter())
        .map(|((u, n, cache), du)| params.backward(cache, &l2_normalize_backward(u, *n, du)))
        .collect::<Result<_>>()?;
    Ok((out.loss, sum_grads(grads), out.d_centers))
}

/// Fresh f32 model; fits input statistics on `data` when standardization is on.
pub fn new_model(cfg: &ModelConfig, data: &[FeatureSet], seed: u64) -> Result<ModelParams<f32>> {
    let mut p = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x1417])))?;
    if cfg.standardize {
        p.fit_input_stats(data)?;
    }
    Ok(p)
}

fn check_dataset(data: &[FeatureSet], params: &ModelParams<f32>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let n = params.config.n_blocks;
    if let Some(bad) = data.iter().find(|f| f.blocks.len() != n) {
        return Err(Error::Mismatch(format!(
            "image {} has {} blocks; all images must have {n}",
            bad.image_id,
            bad.blocks.len()
        )));
    }
    Ok(())
}

fn guard(loss: f64, grads: &ModelParams<f32>, epoch: usize, step: usize) -> Result<()> {
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss or gradient at epoch {epoch}, step {step} (loss = {loss}); \
             try a lower lr_peak or enable grad_clip"
        )));
    }
    Ok(())
}

fn clip(grads: &mut ModelParams<f32>, extra: Option<&mut Tensor<f32>>, max: Option<f64>) {
    let Some(max) = max else { return };
    let mut sq = grad_norm(grads).powi(2);
    if let Some(e) = &extra {
        sq += e.data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
    }
    let n = sq.sqrt();
    if n > max {
        let s = (max / n) as f32;
        grads.scale(s);
        if let Some(e) = extra {
            e.scale(s);
        }
    }
}

/// Keys from the momentum encoder for augmented views of `idx`.
fn momentum_keys(
    encoder: &ModelParams<f32>,
    data: &[FeatureSet],
    idx: &[usize],
    aug: &AugmentConfig,
    seeds: &[u64],
) -> Result<Vec<Vec<f32>>> {
    idx.par_iter()
        .zip(seeds.par_iter())
        .map(|(&i, &s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let view = augment_view(&data[i], aug, &mut rng)?;
            let input = encoder.prepare(&view)?;
            let (h, _) = encoder.forward(&input, Some(&mut rng))?;
            Ok(l2_normalize(&h)?.0)
        })
        .collect()
}

/// Unsupervised contrastive training from `init`.
pub fn train_unsupervised(
    data: &[FeatureSet],
    init: ModelParams<f32>,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    observer: &mut Observer,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.validate_queue()?;
    aug.validate()?;
    check_dataset(data, &init)?;
    let b = cfg.batch_size;
    let steps_per_epoch = data.len() / b;
    if steps_per_epoch == 0 {
        return Err(Error::invalid(format!(
            "{} images cannot fill one batch of {b}",
            data.len()
        )));
    }
    let (warmup, total) = (cfg.warmup_epochs * steps_per_epoch, cfg.total_epochs * steps_per_epoch);
    let mut params = init;
    let mut encoder_k = params.clone();
    let mut opt = Sgd::new(cfg.sgd_momentum, cfg.weight_decay, cfg.decay_all);
    let mut queue = NegativeQueue::new(params.config.dim, cfg.queue_size)?;

    // warm-fill the queue so every step sees K negatives
    let mut fill_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[0xf111]));
    let mut round = 0u64;
    while !queue.is_full() {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut fill_rng);
        order.truncate(cfg.queue_size - queue.len());
        let seeds: Vec<u64> = (0..order.len()).map(|i| mix_seed(cfg.seed, &[0xf111, round, i as u64])).collect();
        let keys = momentum_keys(&encoder_k, data, &order, aug, &seeds)?;
        queue.push_batch(keys.iter().map(|k| k.as_slice()))?;
        round += 1;
    }

    let mut history = Vec::with_capacity(cfg.total_epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.total_epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[0xe90c, epoch as u64])));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for s in 0..steps_per_epoch {
            let idx = &order[s * b..(s + 1) * b];
            let sample_seed = |i: usize, tag: u64| mix_seed(cfg.seed, &[tag, epoch as u64, s as u64, i as u64]);
            let key_seeds: Vec<u64> = (0..b).map(|i| sample_seed(i, 0x4b)).collect();
            let keys = momentum_keys(&encoder_k, data, idx, aug, &key_seeds)?;
            let queries: Vec<ModelInput<f32>> = idx
                .par_iter()
                .enumerate()
                .map(|(i, &di)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(i, 0x51));
                    params.prepare(&augment_view(&data[di], aug, &mut rng)?)
                })
                .collect::<Result<_>>()?;
            let drop_seeds: Vec<u64> = (0..b).map(|i| sample_seed(i, 0xd0)).collect();
            let negatives: Vec<Vec<f32>> = queue.entries().map(|e| e.to_vec()).collect();
            let (loss, mut grads) = contrastive_batch(
                &params,
                &queries,
                &keys,
                &negatives,
                cfg.tau,
                cfg.in_batch_negatives,
                Some(&drop_seeds),
            )?;
            guard(loss as f64, &grads, epoch + 1, s)?;
            clip(&mut grads, None, cfg.grad_clip);
            lr = lr_schedule(step, warmup, total, cfg.lr_peak);
            opt.step(&mut params, &grads, &mut [], lr);
            momentum_update(&mut encoder_k, &params, cfg.m)?;
            queue.push_batch(keys.iter().map(|k| k.as_slice()))?;
            loss_sum += loss as f64;
            step += 1;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / steps_per_epoch as f64,
            lr,
        };
        log::info!("unsup epoch {} loss {:.5} lr {:.3e}", stats.epoch, stats.loss, stats.lr);
        observer(&stats, &params, None)?;
        history.push(stats);
    }
    Ok(TrainOutcome {
        params,
        head: None,
        history,
    })
}

/// Random unit class centers.
pub fn init_arcface_head(n_classes: usize, dim: usize, scale: f64, margin: f64, seed: u64) -> Result<ArcFaceHead<f32>> {
    if n_classes < 2 {
        return Err(Error::invalid("ArcFace needs at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0xa4c]));
    let normal = rand_distr::Normal::new(0.0f64, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(n_classes * dim);
    for _ in 0..n_classes {
        let row: Vec<f64> = (0..dim).map(|_| rng.sample(normal)).collect();
        let (u, _) = l2_normalize(&row)?;
        data.extend(u.iter().map(|&v| v as f32));
    }
    Ok(ArcFaceHead {
        centers: Tensor::from_vec(&[n_classes, dim], data),
        scale,
        margin,
    })
}

/// Supervised ArcFace fine-tuning of `init` (normally the unsupervised checkpoint).
pub fn fine_tune_supervised(
    data: &[FeatureSet],
    labels: &[usize],
    n_classes: usize,
    init: ModelParams<f32>,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    observer: &mut Observer,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    aug.validate()?;
    check_dataset(data, &init)?;
    if labels.len() != data.len() {
        return Err(Error::Mismatch(format!("{} labels for {} images", labels.len(), data.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {n_classes} classes")));
    }
    let b = cfg.batch_size;
    let steps_per_epoch = data.len().div_ceil(b);
    let (warmup, total) = (cfg.warmup_epochs * steps_per_epoch, cfg.total_epochs * steps_per_epoch);
    let mut params = init;
    let mut head = init_arcface_head(n_classes, params.config.dim, cfg.arcface_scale, cfg.arcface_margin, cfg.seed)?;
    let mut opt = Sgd::new(cfg.sgd_momentum, cfg.weight_decay, cfg.decay_all);
    let mut history = Vec::with_capacity(cfg.total_epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.total_epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[0x5e9, epoch as u64])));
        let (mut loss_sum, mut seen, mut lr) = (0.0, 0usize, 0.0);
        for (s, idx) in order.chunks(b).enumerate() {
            let sample_seed = |i: usize, tag: u64| mix_seed(cfg.seed, &[tag, epoch as u64, s as u64, i as u64]);
            let inputs: Vec<ModelInput<f32>> = idx
                .par_iter()
                .enumerate()
                .map(|(i, &di)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(i, 0xa9));
                    params.prepare(&augment_view(&data[di], aug, &mut rng)?)
                })
                .collect::<Result<_>>()?;
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let drop_seeds: Vec<u64> = (0..idx.len()).map(|i| sample_seed(i, 0xd1)).collect();
            let (loss, mut grads, mut dcent) = arcface_batch(&params, &head, &inputs, &ys, Some(&drop_seeds))?;
            guard(loss as f64, &grads, epoch + 1, s)?;
            if !dcent.all_finite() {
                return Err(Error::Numerical(format!("non-finite center gradient at epoch {}", epoch + 1)));
            }
            clip(&mut grads, Some(&mut dcent), cfg.grad_clip);
            lr = lr_schedule(step, warmup, total, cfg.lr_peak);
            opt.step(&mut params, &grads, &mut [(&mut head.centers, &dcent)], lr);
            loss_sum += loss as f64 * idx.len() as f64;
            seen += idx.len();
            step += 1;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / seen as f64,
            lr,
        };
        log::info!("sup epoch {} loss {:.5} lr {:.3e}", stats.epoch, stats.loss, stats.lr);
        observer(&stats, &params, Some(&head))?;
        history.push(stats);
    }
    Ok(TrainOutcome {
        params,
        head: Some(head),
        history,
    })
}
