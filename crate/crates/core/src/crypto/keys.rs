use blake2::digest::consts::U32;
use blake2::digest::Mac;
use blake2::Blake2bMac;

use crate::codec::{Component, RgbImage};
use crate::error::{Error, Result};

pub type Key = [u8; 32];

/// Coefficient class a key or keystream is bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoeffClass {
    Dc,
    Ac,
}

impl CoeffClass {
    pub fn name(self) -> &'static str {
        match self {
            CoeffClass::Dc => "dc",
            CoeffClass::Ac => "ac",
        }
    }
}

/// 256-bit secret mixed into every per-image key derivation.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterSecret(pub Key);

impl std::fmt::Debug for MasterSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MasterSecret(..)")
    }
}

impl MasterSecret {
    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::invalid(format!("master key: {e}")))?;
        let key: Key = bytes
            .try_into()
            .map_err(|b: Vec<u8>| Error::invalid(format!("master key must be 32 bytes, got {}", b.len())))?;
        Ok(MasterSecret(key))
    }
}

/// Six independent 256-bit keys: `dc[c]`, `ac[c]` for c in Y,U,V.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct KeySet {
    #[serde(with = "hex_keys")]
    pub dc: [Key; 3],
    #[serde(with = "hex_keys")]
    pub ac: [Key; 3],
}

impl KeySet {
    pub fn key(&self, component: Component, class: CoeffClass) -> &Key {
        match class {
            CoeffClass::Dc => &self.dc[component.index()],
            CoeffClass::Ac => &self.ac[component.index()],
        }
    }

    /// All six keys, DC first then AC, each in Y,U,V order.
    pub fn iter(&self) -> impl Iterator<Item = &Key> {
        self.dc.iter().chain(self.ac.iter())
    }
}

fn domain_tag(component: Component, class: CoeffClass) -> [u8; 13] {
    let mut tag = *b"evit.key.xx.C";
    tag[9..11].copy_from_slice(class.name().as_bytes());
    tag[12] = component.name().as_bytes()[0];
    tag
}

/// Keyed BLAKE2b-256 of `image_bytes || tag`, one tag per (class, component).
pub fn derive_keyset(image_bytes: &[u8], master: &MasterSecret) -> Result<KeySet> {
    if image_bytes.is_empty() {
        return Err(Error::invalid("cannot derive keys from empty image bytes"));
    }
    let derive = |component, class| -> Key {
        let mut mac = <Blake2bMac<U32> as Mac>::new_from_slice(&master.0).expect("32-byte key is valid");
        mac.update(image_bytes);
        mac.update(&domain_tag(component, class));
        mac.finalize().into_bytes().into()
    };
    Ok(KeySet {
        dc: Component::ALL.map(|c| derive(c, CoeffClass::Dc)),
        ac: Component::ALL.map(|c| derive(c, CoeffClass::Ac)),
    })
}

/// Adaptive keys for a decoded image: dimensions and raw RGB bytes are hashed.
pub fn derive_keyset_for_image(image: &RgbImage, master: &MasterSecret) -> Result<KeySet> {
    let mut bytes = Vec::with_capacity(8 + image.pixels().len());
    bytes.extend_from_slice(&image.width().to_le_bytes());
    bytes.extend_from_slice(&image.height().to_le_bytes());
    bytes.extend_from_slice(image.pixels());
    derive_keyset(&bytes, master)
}

mod hex_keys {
    use super::Key;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(keys: &[Key; 3], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(keys.iter().map(hex::encode))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Key; 3], D::Error> {
        let v: Vec<String> = Vec::deserialize(d)?;
        if v.len() != 3 {
            return Err(D::Error::custom("expected three keys"));
        }
        let mut out = [[0u8; 32]; 3];
        for (o, s) in out.iter_mut().zip(v) {
            let b = hex::decode(&s).map_err(D::Error::custom)?;
            *o = b.try_into().map_err(|_| D::Error::custom("key must be 32 bytes"))?;
        }
        Ok(out)
    }
}
