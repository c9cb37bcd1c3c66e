use super::{Reader, Writer};
use crate::error::Result;
use crate::features::{FeatureSet, HuffFreqVector, BLOCK_DIM, GLOBAL_DIM};

const MAGIC: &[u8; 4] = b"EVFT";
const VERSION: u16 = 1;

pub fn write_features(sets: &[FeatureSet]) -> Result<Vec<u8>> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.len32(sets.len(), "image")?;
    for fs in sets {
        w.str16(&fs.image_id)?;
        w.len32(fs.blocks.len(), "block")?;
        for b in &fs.blocks {
            w.bytes(b);
        }
        for &c in fs.global.as_slice() {
            w.u32(c);
        }
    }
    Ok(w.0)
}

pub fn read_features(bytes: &[u8]) -> Result<Vec<FeatureSet>> {
    let mut r = Reader::open(bytes, MAGIC, VERSION, "feature")?;
    let n = r.u32()? as usize;
    r.ensure(n, 2 + 4 + GLOBAL_DIM * 4)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let image_id = r.str16()?;
        let nb = r.u32()? as usize;
        r.ensure(nb, BLOCK_DIM)?;
        let blocks = (0..nb)
            .map(|_| Ok(r.take(BLOCK_DIM)?.try_into().expect("block size")))
            .collect::<Result<Vec<_>>>()?;
        let global = (0..GLOBAL_DIM).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        out.push(FeatureSet {
            image_id,
            blocks,
            global: HuffFreqVector(global),
        });
    }
    r.finish()?;
    Ok(out)
}
