//! Format-compliant encryption: VLI bits of every DC and AC token are
//! XOR-ed with a per-(component, class) keystream while Huffman codes and
//! the file structure stay untouched. Decryption is the same operation.
//!
//! There is no integrity check. Decrypting with the wrong [`KeySet`] yields
//! a valid but scrambled image and no error.

pub mod keys;
pub mod keystream;

pub use keys::{derive_keyset, derive_keyset_for_image, CoeffClass, Key, KeySet, MasterSecret};
pub use keystream::KeystreamCursor;

use crate::codec::{
    decompress_file, parse_jpeg, serialize_jpeg, CoefficientGrid, Component, EntropyStream,
    JpegEncoder, JpegFile, RgbImage, VliToken,
};
use crate::error::{Error, Result};

/// Bytes of a JPEG whose VLI bits are keystream-encrypted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherJpeg(Vec<u8>);

impl CipherJpeg {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        CipherJpeg(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[u8]> for CipherJpeg {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// XOR the token's VLI bits with `keystream` (exactly `category` bits wide).
pub fn xor_vli(token: VliToken, keystream: u16, keystream_len: u8) -> Result<VliToken> {
    if keystream_len != token.category {
        return Err(Error::invalid(format!(
            "keystream has {keystream_len} bits, token needs {}",
            token.category
        )));
    }
    if keystream_len < 16 && keystream >> keystream_len != 0 {
        return Err(Error::invalid("keystream wider than its declared length"));
    }
    Ok(VliToken {
        bits: token.bits ^ keystream,
        ..token
    })
}

/// XOR every VLI field of the stream in place. Applying it twice with the
/// same keys restores the original stream.
pub fn apply_keystream(stream: &mut EntropyStream, keys: &KeySet) {
    for c in Component::ALL {
        let mut dc = KeystreamCursor::new(*keys.key(c, CoeffClass::Dc), c, CoeffClass::Dc);
        let mut ac = KeystreamCursor::new(*keys.key(c, CoeffClass::Ac), c, CoeffClass::Ac);
        for block in &mut stream.components[c.index()] {
            let n = block.dc.category;
            block.dc = xor_vli(block.dc, dc.take(n) as u16, n).expect("length matches category");
            for t in &mut block.ac {
                let n = t.category;
                *t = xor_vli(*t, ac.take(n) as u16, n).expect("length matches category");
            }
        }
    }
}

/// Compress and encrypt in one pass.
pub fn encrypt_image(image: &RgbImage, keys: &KeySet, encoder: &JpegEncoder) -> Result<CipherJpeg> {
    let mut file = encoder.encode_file(image)?;
    apply_keystream(&mut file.stream, keys);
    Ok(CipherJpeg(serialize_jpeg(&file)?))
}

/// Adaptive mode: derive the keys from the image itself, then encrypt.
pub fn encrypt_adaptive(
    image: &RgbImage,
    master: &MasterSecret,
    encoder: &JpegEncoder,
) -> Result<(CipherJpeg, KeySet)> {
    let keys = derive_keyset_for_image(image, master)?;
    Ok((encrypt_image(image, &keys, encoder)?, keys))
}

/// Parse and decrypt to the plain JPEG structure.
pub fn decrypt_file(cipher: &CipherJpeg, keys: &KeySet) -> Result<JpegFile> {
    let mut file = parse_jpeg(cipher.as_bytes())?;
    apply_keystream(&mut file.stream, keys);
    Ok(file)
}

/// Exact quantized coefficients of the plain image.
pub fn decrypt_coefficients(cipher: &CipherJpeg, keys: &KeySet) -> Result<CoefficientGrid> {
    let file = decrypt_file(cipher, keys)?;
    CoefficientGrid::from_stream(&file.stream, file.width as u32, file.height as u32)
}

pub fn decrypt_image(cipher: &CipherJpeg, keys: &KeySet) -> Result<RgbImage> {
    decompress_file(&decrypt_file(cipher, keys)?)
}

/// Plain JPEG bytes recovered from a cipher (re-serialized, no pixel loss).
pub fn decrypt_to_jpeg(cipher: &CipherJpeg, keys: &KeySet) -> Result<Vec<u8>> {
    serialize_jpeg(&decrypt_file(cipher, keys)?)
}
