use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Reader, Writer};
use crate::crypto::CipherJpeg;
use crate::error::{Error, Result};
use crate::eval::{rank_by_cosine, RankedResult};
use crate::features::{extract, FeatureSet};
use crate::model::ModelParams;

const MAGIC: &[u8; 4] = b"EVIX";
const VERSION: u16 = 1;
const UNIT_TOL: f64 = 1e-3;

/// Unit-norm representation vectors addressed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    fingerprint: [u8; 32],
}

impl RetrievalIndex {
    pub fn new(dim: usize, ids: Vec<String>, vectors: Vec<f32>, fingerprint: [u8; 32]) -> Result<Self> {
        if dim == 0 || vectors.len() != ids.len() * dim {
            return Err(Error::Mismatch(format!(
                "{} values cannot hold {} vectors of dimension {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!("duplicate id {dup} in index")));
        }
        for (id, v) in ids.iter().zip(vectors.chunks(dim)) {
            let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::Numerical(format!("vector for {id} has norm {n}, expected 1")));
            }
        }
        Ok(RetrievalIndex {
            dim,
            ids,
            vectors,
            fingerprint,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn rank(&self, query_id: &str, query: &[f32], k: usize, exclude: Option<&str>) -> Result<RankedResult> {
        rank_by_cosine(query_id, query, &self.ids, &self.vectors, k, exclude)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.len32(self.dim, "dimension")?;
        w.len32(self.ids.len(), "vector")?;
        for id in &self.ids {
            w.str16(id)?;
        }
        w.f32s(&self.vectors);
        w.bytes(&self.fingerprint);
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION, "index")?;
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        r.ensure(n, 2 + 4 * dim)?;
        let ids = (0..n).map(|_| r.str16()).collect::<Result<Vec<_>>>()?;
        let vectors = r.f32s(n * dim)?;
        let fingerprint: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        r.finish()?;
        RetrievalIndex::new(dim, ids, vectors, fingerprint).map_err(|e| Error::Format(format!("corrupt index: {e}")))
    }
}

/// Embed every feature set (eval mode, L2-normalized).
pub fn build_index(features: &[FeatureSet], params: &ModelParams<f32>, fingerprint: [u8; 32]) -> Result<RetrievalIndex> {
    let vectors: Vec<Vec<f32>> = features.par_iter().map(|fs| params.embed(fs)).collect::<Result<_>>()?;
    RetrievalIndex::new(
        params.config.dim,
        features.iter().map(|f| f.image_id.clone()).collect(),
        vectors.concat(),
        fingerprint,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub result: RankedResult,
    /// Feature extraction from the cipher bytes.
    pub extract_secs: f64,
    /// Forward pass and ranking.
    pub rank_secs: f64,
    pub total_secs: f64,
}

/// Extract, embed and rank a query cipher-image. Refuses to mix encoders.
pub fn search(
    query: &CipherJpeg,
    query_id: &str,
    index: &RetrievalIndex,
    params: &ModelParams<f32>,
    checkpoint_fingerprint: &[u8; 32],
    k: usize,
) -> Result<SearchOutcome> {
    if index.fingerprint() != checkpoint_fingerprint {
        return Err(Error::Mismatch(
            "index was built with a different checkpoint; rebuild the index or pass the matching checkpoint".into(),
        ));
    }
    let t0 = Instant::now();
    let fs = extract(query, query_id)?;
    let t1 = Instant::now();
    let v = params.embed(&fs)?;
    let result = index.rank(query_id, &v, k, None)?;
    let t2 = Instant::now();
    Ok(SearchOutcome {
        result,
        extract_secs: (t1 - t0).as_secs_f64(),
        rank_secs: (t2 - t1).as_secs_f64(),
        total_secs: (t2 - t0).as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip_and_validation() {
        let ids = vec!["a".to_string(), "b/c".to_string()];
        let v = vec![1.0, 0.0, 0.6, 0.8];
        let ix = RetrievalIndex::new(2, ids.clone(), v.clone(), [7; 32]).unwrap();
        let bytes = ix.to_bytes().unwrap();
        assert_eq!(RetrievalIndex::from_bytes(&bytes).unwrap(), ix);
        assert!(RetrievalIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(RetrievalIndex::new(2, ids.clone(), vec![2.0, 0.0, 0.6, 0.8], [0; 32]).is_err());
        assert!(RetrievalIndex::new(2, vec!["a".into(), "a".into()], v, [0; 32]).is_err());
        let r = ix.rank("q", &[0.6, 0.8], 1, None).unwrap();
        assert_eq!(r.items[0].0, "b/c");
    }
}
