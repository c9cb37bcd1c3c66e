//! Forward and backward kernels. Activations are row-major `rows × width`.

use rand::{Rng, RngCore};

use super::params::{LayerNorm, Linear};
use super::tensor::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, Scalar};

pub const LN_EPS: f64 = 1e-6;

pub fn linear_forward<F: Scalar>(l: &Linear<F>, x: &[F], rows: usize) -> Vec<F> {
    let (i, o) = (l.in_dim(), l.out_dim());
    let mut y = Vec::with_capacity(rows * o);
    for _ in 0..rows {
        y.extend_from_slice(&l.bias.data);
    }
    matmul_acc(x, &l.weight.data, &mut y, rows, i, o);
    y
}

/// Accumulates into `grad` and returns `dx` when `want_dx`.
pub fn linear_backward<F: Scalar>(
    l: &Linear<F>,
    grad: &mut Linear<F>,
    x: &[F],
    dy: &[F],
    rows: usize,
    want_dx: bool,
) -> Option<Vec<F>> {
    let (i, o) = (l.in_dim(), l.out_dim());
    matmul_tn_acc(x, dy, &mut grad.weight.data, rows, i, o);
    for r in 0..rows {
        for (g, &d) in grad.bias.data.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
            *g += d;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![F::zero(); rows * i];
        matmul_nt_acc(dy, &l.weight.data, &mut dx, rows, o, i);
        dx
    })
}

pub struct LnCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

pub fn layer_norm_forward<F: Scalar>(ln: &LayerNorm<F>, x: &[F], rows: usize) -> (Vec<F>, LnCache<F>) {
    let d = ln.gamma.len();
    let inv_d = F::one() / F::of(d as f64);
    let eps = F::of(LN_EPS);
    let mut y = vec![F::zero(); rows * d];
    let mut xhat = vec![F::zero(); rows * d];
    let mut rstd = vec![F::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * ln.gamma.data[j] + ln.beta.data[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward<F: Scalar>(
    ln: &LayerNorm<F>,
    grad: &mut LayerNorm<F>,
    cache: &LnCache<F>,
    dy: &[F],
    rows: usize,
) -> Vec<F> {
    let d = ln.gamma.len();
    let inv_d = F::one() / F::of(d as f64);
    let mut dx = vec![F::zero(); rows * d];
    let mut dxhat = vec![F::zero(); d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        for j in 0..d {
            grad.gamma.data[j] += g[j] * xh[j];
            grad.beta.data[j] += g[j];
            dxhat[j] = g[j] * ln.gamma.data[j];
        }
        let s1 = dxhat.iter().copied().sum::<F>() * inv_d;
        let s2 = dot(&dxhat, xh) * inv_d;
        let rs = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = rs * (dxhat[j] - s1 - xh[j] * s2);
        }
    }
    dx
}

pub fn gelu<F: Scalar>(x: F) -> F {
    let v = x.f64();
    F::of(0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2)))
}

pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let v = x.f64();
    let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
    F::of(cdf + v * pdf)
}

/// Inverted dropout mask (`0` or `1/(1-p)`), or `None` when inactive.
/// Uniforms are drawn as f64 so f32 and f64 models share masks for a seed.
pub fn dropout_mask<F: Scalar, R: RngCore + ?Sized>(len: usize, p: f64, rng: Option<&mut R>) -> Option<Vec<F>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = F::of(1.0 / (1.0 - p));
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
            .collect(),
    )
}

pub fn apply_mask<F: Scalar>(x: &mut [F], mask: &Option<Vec<F>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

pub fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Multi-head attention where only the first `tq` rows issue queries.
pub struct AttnCache<F> {
    /// Query-side input rows (`tq × D`).
    pub xq_rows: usize,
    pub q: Vec<F>,
    pub k: Vec<F>,
    pub v: Vec<F>,
    /// `heads × tq × t` attention weights.
    pub probs: Vec<F>,
    /// Concatenated head outputs (`tq × D`), input to `W_O`.
    pub concat: Vec<F>,
}

pub struct AttnWeights<'a, F> {
    pub wq: &'a Linear<F>,
    pub wk: &'a Linear<F>,
    pub wv: &'a Linear<F>,
    pub wo: &'a Linear<F>,
}

pub struct AttnGrads<'a, F> {
    pub wq: &'a mut Linear<F>,
    pub wk: &'a mut Linear<F>,
    pub wv: &'a mut Linear<F>,
    pub wo: &'a mut Linear<F>,
}

fn head_slice<F: Scalar>(x: &[F], rows: usize, d: usize, h: usize, dk: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(rows * dk);
    for r in 0..rows {
        out.extend_from_slice(&x[r * d + h * dk..r * d + (h + 1) * dk]);
    }
    out
}

fn head_scatter_add<F: Scalar>(dst: &mut [F], src: &[F], rows: usize, d: usize, h: usize, dk: usize) {
    for r in 0..rows {
        for j in 0..dk {
            dst[r * d + h * dk + j] += src[r * dk + j];
        }
    }
}

/// `x` is `t × D`; returns `tq × D`.
pub fn attention_forward<F: Scalar>(
    w: &AttnWeights<F>,
    x: &[F],
    t: usize,
    tq: usize,
    heads: usize,
) -> (Vec<F>, AttnCache<F>) {
    let d = w.wq.in_dim();
    let dk = d / heads;
    let scale = F::one() / F::of(dk as f64).sqrt();
    let q = linear_forward(w.wq, &x[..tq * d], tq);
    let k = linear_forward(w.wk, x, t);
    let v = linear_forward(w.wv, x, t);
    let mut probs = vec![F::zero(); heads * tq * t];
    let mut concat = vec![F::zero(); tq * d];
    for h in 0..heads {
        let qh = head_slice(&q, tq, d, h, dk);
        let kh = head_slice(&k, t, d, h, dk);
        let vh = head_slice(&v, t, d, h, dk);
        let p = &mut probs[h * tq * t..(h + 1) * tq * t];
        matmul_nt_acc(&qh, &kh, p, tq, dk, t);
        for row in p.chunks_mut(t) {
            row.iter_mut().for_each(|s| *s *= scale);
            softmax_in_place(row);
        }
        let mut oh = vec![F::zero(); tq * dk];
        matmul_acc(p, &vh, &mut oh, tq, t, dk);
        head_scatter_add(&mut concat, &oh, tq, d, h, dk);
    }
    let out = linear_forward(w.wo, &concat, tq);
    (
        out,
        AttnCache {
            xq_rows: tq,
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

/// Returns `dx` for all `t` input rows.
pub fn attention_backward<F: Scalar>(
    w: &AttnWeights<F>,
    g: AttnGrads<F>,
    cache: &AttnCache<F>,
    x: &[F],
    dout: &[F],
    t: usize,
    heads: usize,
) -> Vec<F> {
    let d = w.wq.in_dim();
    let dk = d / heads;
    let tq = cache.xq_rows;
    let scale = F::one() / F::of(dk as f64).sqrt();
    let dconcat = linear_backward(w.wo, g.wo, &cache.concat, dout, tq, true).expect("dx requested");
    let mut dq = vec![F::zero(); tq * d];
    let mut dk_all = vec![F::zero(); t * d];
    let mut dv = vec![F::zero(); t * d];
    for h in 0..heads {
        let qh = head_slice(&cache.q, tq, d, h, dk);
        let kh = head_slice(&cache.k, t, d, h, dk);
        let vh = head_slice(&cache.v, t, d, h, dk);
        let doh = head_slice(&dconcat, tq, d, h, dk);
        let p = &cache.probs[h * tq * t..(h + 1) * tq * t];

        let mut dvh = vec![F::zero(); t * dk];
        matmul_tn_acc(p, &doh, &mut dvh, tq, t, dk);
        let mut ds = vec![F::zero(); tq * t];
        matmul_nt_acc(&doh, &vh, &mut ds, tq, dk, t);
        for (prow, drow) in p.chunks(t).zip(ds.chunks_mut(t)) {
            let inner = dot(prow, drow);
            for (dsv, &pv) in drow.iter_mut().zip(prow) {
                *dsv = pv * (*dsv - inner) * scale;
            }
        }
        let mut dqh = vec![F::zero(); tq * dk];
        matmul_acc(&ds, &kh, &mut dqh, tq, t, dk);
        let mut dkh = vec![F::zero(); t * dk];
        matmul_tn_acc(&ds, &qh, &mut dkh, tq, t, dk);

        head_scatter_add(&mut dq, &dqh, tq, d, h, dk);
        head_scatter_add(&mut dk_all, &dkh, t, d, h, dk);
        head_scatter_add(&mut dv, &dvh, t, d, h, dk);
    }
    let mut dx = linear_backward(w.wk, g.wk, x, &dk_all, t, true).expect("dx requested");
    let dxv = linear_backward(w.wv, g.wv, x, &dv, t, true).expect("dx requested");
    let dxq = linear_backward(w.wq, g.wq, &x[..tq * d], &dq, tq, true).expect("dx requested");
    for (a, b) in dx.iter_mut().zip(&dxv) {
        *a += *b;
    }
    for (a, b) in dx.iter_mut().zip(&dxq) {
        *a += *b;
    }
    dx
}
