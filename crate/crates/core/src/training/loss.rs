use crate::error::{Error, Result};
use crate::model::tensor::{dot, Scalar, Tensor};

/// `h / ‖h‖` together with `‖h‖`.
pub fn l2_normalize<F: Scalar>(h: &[F]) -> Result<(Vec<F>, F)> {
    let norm = dot(h, h).sqrt();
    if !(norm > F::zero()) || !norm.is_finite() {
        return Err(Error::Numerical(format!("cannot normalize vector with norm {:?}", norm)));
    }
    Ok((h.iter().map(|&v| v / norm).collect(), norm))
}

/// Gradient through `u = h/‖h‖`: `(du − u·(u·du)) / ‖h‖`.
pub fn l2_normalize_backward<F: Scalar>(unit: &[F], norm: F, du: &[F]) -> Vec<F> {
    let proj = dot(unit, du);
    unit.iter().zip(du).map(|(&u, &d)| (d - u * proj) / norm).collect()
}

fn check_unit<F: Scalar>(v: &[F], what: &str) -> Result<()> {
    let n = dot(v, v).sqrt().f64();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numerical(format!("{what} has norm {n}")));
    }
    Ok(())
}

/// Contrastive loss of one query against its positive key and negatives.
#[derive(Debug, Clone)]
pub struct InfoNce<F> {
    pub loss: F,
    pub d_query: Vec<F>,
    pub d_key: Vec<F>,
}

/// `−log( e^{q·k/τ} / (e^{q·k/τ} + Σ e^{q·n/τ}) )`
pub fn info_nce<F: Scalar>(query: &[F], key: &[F], negatives: &[&[F]], tau: f64) -> Result<InfoNce<F>> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if negatives.is_empty() {
        return Err(Error::invalid("InfoNCE needs at least one negative"));
    }
    if query.len() != key.len() || negatives.iter().any(|n| n.len() != query.len()) {
        return Err(Error::Mismatch("InfoNCE vectors differ in dimension".into()));
    }
    check_unit(query, "query")?;
    check_unit(key, "key")?;
    let inv_t = F::of(1.0 / tau);
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(dot(query, key) * inv_t);
    logits.extend(negatives.iter().map(|n| dot(query, n) * inv_t));
    let mx = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    let loss = mx + sum.ln() - logits[0];

    // softmax weights; the positive gets (p0 − 1)
    let mut d_query: Vec<F> = key.iter().map(|&k| k * (exps[0] / sum - F::one()) * inv_t).collect();
    for (n, &e) in negatives.iter().zip(&exps[1..]) {
        let w = e / sum * inv_t;
        for (d, &v) in d_query.iter_mut().zip(n.iter()) {
            *d += w * v;
        }
    }
    let d_key = query.iter().map(|&q| q * (exps[0] / sum - F::one()) * inv_t).collect();
    Ok(InfoNce { loss, d_query, d_key })
}

/// Class centers plus scale `s` and additive angular margin `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcFaceHead<F> {
    /// `n_classes × D`, normalized on use.
    pub centers: Tensor<F>,
    pub scale: f64,
    pub margin: f64,
}

pub const ARCFACE_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct ArcFaceOutput<F> {
    pub loss: F,
    /// Per-sample gradient w.r.t. the unit features.
    pub d_features: Vec<Vec<F>>,
    pub d_centers: Tensor<F>,
}

impl<F: Scalar> ArcFaceHead<F> {
    pub fn n_classes(&self) -> usize {
        self.centers.dims[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.dims[1]
    }

    pub fn cast<G: Scalar>(&self) -> ArcFaceHead<G> {
        ArcFaceHead {
            centers: self.centers.cast(),
            scale: self.scale,
            margin: self.margin,
        }
    }
}

/// Mean ArcFace loss over a batch of unit feature vectors.
pub fn arcface_loss<F: Scalar>(features: &[Vec<F>], labels: &[usize], head: &ArcFaceHead<F>) -> Result<ArcFaceOutput<F>> {
    let (n, d) = (head.n_classes(), head.dim());
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Mismatch(format!(
            "{} features for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
        return Err(Error::invalid(format!("label {bad} out of range for {n} classes")));
    }
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Mismatch(format!("features must have dimension {d}")));
    }
    let s = F::of(head.scale);
    let (cos_a, sin_a) = (F::of(head.margin.cos()), F::of(head.margin.sin()));
    let lim = F::one() - F::of(ARCFACE_EPS);

    let mut unit_c = Vec::with_capacity(n);
    let mut c_norm = Vec::with_capacity(n);
    for row in head.centers.data.chunks(d) {
        let (u, nrm) = l2_normalize(row)?;
        unit_c.push(u);
        c_norm.push(nrm);
    }

    let batch = F::of(features.len() as f64);
    let mut loss = F::zero();
    let mut d_features = Vec::with_capacity(features.len());
    let mut d_unit_c = vec![vec![F::zero(); d]; n];
    for (h, &y) in features.iter().zip(labels) {
        let cos: Vec<F> = unit_c.iter().map(|c| dot(h, c)).collect();
        let cy = cos[y];
        let clamped = cy > lim || cy < -lim;
        let cyc = cy.max(-lim).min(lim);
        let siny = (F::one() - cyc * cyc).sqrt();
        // cos(θ + α) = cosθ·cosα − sinθ·sinα
        let target = cyc * cos_a - siny * sin_a;
        let mut logits: Vec<F> = cos.iter().map(|&c| c * s).collect();
        logits[y] = target * s;
        let mx = logits.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = logits.iter().map(|&l| (l - mx).exp()).collect();
        let sum: F = exps.iter().copied().sum();
        loss += mx + sum.ln() - logits[y];

        let mut dh = vec![F::zero(); d];
        for j in 0..n {
            let mut g = exps[j] / sum;
            if j == y {
                g -= F::one();
            }
            let mut dcos = g * s / batch;
            if j == y {
                dcos = if clamped { F::zero() } else { dcos * (cos_a + cyc * sin_a / siny) };
            }
            if dcos == F::zero() {
                continue;
            }
            for k in 0..d {
                dh[k] += dcos * unit_c[j][k];
                d_unit_c[j][k] += dcos * h[k];
            }
        }
        d_features.push(dh);
    }
    let mut d_centers = head.centers.zeros_like();
    for j in 0..n {
        let g = l2_normalize_backward(&unit_c[j], c_norm[j], &d_unit_c[j]);
        d_centers.data[j * d..(j + 1) * d].copy_from_slice(&g);
    }
    Ok(ArcFaceOutput {
        loss: loss / batch,
        d_features,
        d_centers,
    })
}
