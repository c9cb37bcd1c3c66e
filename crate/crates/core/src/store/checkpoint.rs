use std::collections::HashMap;

use blake2::digest::consts::U32;
use blake2::{Blake2b, Digest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Tensor};
use crate::training::ArcFaceHead;

const MAGIC: &[u8; 4] = b"EVCK";
const VERSION: u16 = 1;
const CENTERS: &str = "arcface.centers";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arcface: Option<ArcMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ArcMeta {
    scale: f64,
    margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub head: Option<ArcFaceHead<f32>>,
}

/// BLAKE2b-256 of the checkpoint bytes; ties an index to its encoder.
pub fn fingerprint(bytes: &[u8]) -> [u8; 32] {
    Blake2b::<U32>::digest(bytes).into()
}

pub fn write_checkpoint(params: &ModelParams<f32>, head: Option<&ArcFaceHead<f32>>) -> Result<Vec<u8>> {
    let meta = Meta {
        model: params.config.clone(),
        arcface: head.map(|h| ArcMeta {
            scale: h.scale,
            margin: h.margin,
        }),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut w = Writer::new(MAGIC, VERSION);
    w.len32(json.len(), "config byte")?;
    w.bytes(&json);
    let mut tensors: Vec<(String, &Tensor<f32>)> = params.tensors().into_iter().map(|(n, _, t)| (n, t)).collect();
    if let Some(h) = head {
        tensors.push((CENTERS.to_string(), &h.centers));
    }
    w.len32(tensors.len(), "tensor")?;
    for (name, t) in tensors {
        w.str16(&name)?;
        w.u8(u8::try_from(t.dims.len()).map_err(|_| Error::invalid("tensor rank exceeds 255"))?);
        for &d in &t.dims {
            w.len32(d, "dimension")?;
        }
        w.f32s(&t.data);
    }
    Ok(w.0)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::open(bytes, MAGIC, VERSION, "checkpoint")?;
    let n = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(n)?)
        .map_err(|e| Error::Format(format!("checkpoint config is not valid JSON: {e}")))?;
    meta.model.validate()?;
    let count = r.u32()? as usize;
    r.ensure(count, 3)?;
    let mut found: HashMap<String, Tensor<f32>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name = r.str16()?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format("tensor too large"))?;
        let data = r.f32s(len)?;
        if found.insert(name.clone(), Tensor::from_vec(&dims, data)).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    r.finish()?;

    // the layout comes from the config; values from the file
    let mut params = ModelParams::<f32>::init(&meta.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _, _)| n).collect();
    for (name, (_, slot)) in names.iter().zip(params.tensors_mut()) {
        let t = found
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
        if t.dims != slot.dims {
            return Err(Error::Format(format!(
                "tensor {name} has shape {:?}, config implies {:?}",
                t.dims, slot.dims
            )));
        }
        *slot = t;
    }
    let head = match (meta.arcface, found.remove(CENTERS)) {
        (Some(a), Some(centers)) => {
            if centers.dims.len() != 2 || centers.dims[1] != meta.model.dim {
                return Err(Error::format("ArcFace centers do not match the model dimension"));
            }
            Some(ArcFaceHead {
                centers,
                scale: a.scale,
                margin: a.margin,
            })
        }
        (None, None) => None,
        _ => return Err(Error::format("ArcFace metadata and centers must appear together")),
    };
    if let Some(extra) = found.keys().next() {
        return Err(Error::Format(format!("checkpoint has unexpected tensor {extra}")));
    }
    Ok(Checkpoint { params, head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FirstToken;
    use crate::training::init_arcface_head;

    fn cfg(first: FirstToken) -> ModelConfig {
        ModelConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            mlp_ratio: 2,
            n_blocks: 5,
            huff_hidden: 4,
            first_token: first,
            standardize: true,
            projection_head: true,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        for first in [FirstToken::Huffman, FirstToken::Ones] {
            let p = ModelParams::<f32>::init(&cfg(first), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let bytes = write_checkpoint(&p, None).unwrap();
            let ck = read_checkpoint(&bytes).unwrap();
            assert_eq!(ck.params, p);
            assert!(ck.head.is_none());
            assert_eq!(write_checkpoint(&ck.params, None).unwrap(), bytes);

            let h = init_arcface_head(4, 8, 32.0, 0.4, 1).unwrap();
            let bytes = write_checkpoint(&p, Some(&h)).unwrap();
            let ck = read_checkpoint(&bytes).unwrap();
            assert_eq!(ck.head.unwrap(), h);
            assert_ne!(fingerprint(&bytes), fingerprint(&write_checkpoint(&p, None).unwrap()));
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = ModelParams::<f32>::init(&cfg(FirstToken::Huffman), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bytes = write_checkpoint(&p, None).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 4]).is_err());
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(read_checkpoint(&v).unwrap_err().to_string().contains("version 9"));
        assert!(read_checkpoint(b"EVIX\x01\x00").is_err());
    }
}
