//! Keyed BLAKE2b in counter mode: block `i` is `BLAKE2b-512_key(i as u64 LE)`,
//! bits consumed MSB-first.

use blake2::digest::consts::U64;
use blake2::digest::Mac;
use blake2::Blake2bMac;

use super::keys::{CoeffClass, Key};
use crate::codec::Component;

const BLOCK_BITS: u64 = 512;

/// Sequential reader over one (component, class) keystream.
#[derive(Clone)]
pub struct KeystreamCursor {
    key: Key,
    component: Component,
    class: CoeffClass,
    bit_offset: u64,
    block_index: u64,
    block: [u8; 64],
}

impl std::fmt::Debug for KeystreamCursor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeystreamCursor")
            .field("component", &self.component)
            .field("class", &self.class)
            .field("bit_offset", &self.bit_offset)
            .finish_non_exhaustive()
    }
}

fn expand(key: &Key, index: u64) -> [u8; 64] {
    let mut mac = <Blake2bMac<U64> as Mac>::new_from_slice(key).expect("32-byte key is valid");
    mac.update(&index.to_le_bytes());
    mac.finalize().into_bytes().into()
}

impl KeystreamCursor {
    pub fn new(key: Key, component: Component, class: CoeffClass) -> Self {
        Self::at_offset(key, component, class, 0)
    }

    pub fn at_offset(key: Key, component: Component, class: CoeffClass, bit_offset: u64) -> Self {
        let block_index = bit_offset / BLOCK_BITS;
        KeystreamCursor {
            block: expand(&key, block_index),
            key,
            component,
            class,
            bit_offset,
            block_index,
        }
    }

    pub fn bit_offset(&self) -> u64 {
        self.bit_offset
    }

    pub fn component(&self) -> Component {
        self.component
    }

    pub fn class(&self) -> CoeffClass {
        self.class
    }

    fn next_bit(&mut self) -> u32 {
        let idx = self.bit_offset / BLOCK_BITS;
        if idx != self.block_index {
            self.block = expand(&self.key, idx);
            self.block_index = idx;
        }
        let within = (self.bit_offset % BLOCK_BITS) as usize;
        self.bit_offset += 1;
        ((self.block[within / 8] >> (7 - within % 8)) & 1) as u32
    }

    /// Next `n <= 32` bits packed MSB-first into the low bits of the result.
    pub fn take(&mut self, n: u8) -> u32 {
        assert!(n <= 32, "at most 32 bits per call");
        let mut v = 0u32;
        for _ in 0..n {
            v = (v << 1) | self.next_bit();
        }
        v
    }

    /// Next `n` bits as booleans.
    pub fn bits(&mut self, n: usize) -> Vec<bool> {
        (0..n).map(|_| self.next_bit() == 1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cursor(key: u8) -> KeystreamCursor {
        KeystreamCursor::new([key; 32], Component::Y, CoeffClass::Dc)
    }

    #[test]
    fn zero_bits_leave_offset() {
        let mut c = cursor(1);
        assert!(c.bits(0).is_empty());
        assert_eq!(c.take(0), 0);
        assert_eq!(c.bit_offset(), 0);
    }

    #[test]
    fn reproducible_and_seekable() {
        let mut a = cursor(2);
        let mut b = cursor(2);
        let xs = a.bits(2000);
        assert_eq!(xs, b.bits(2000));
        let mut c = KeystreamCursor::at_offset([2; 32], Component::Y, CoeffClass::Dc, 777);
        assert_eq!(c.bits(500), xs[777..1277]);
        assert_ne!(cursor(3).bits(256), xs[..256]);
    }

    #[test]
    fn take_matches_bits() {
        let mut a = cursor(4);
        let mut b = cursor(4);
        for n in [3u8, 11, 1, 32, 7] {
            let packed = a.take(n);
            let bits = b.bits(n as usize);
            let expect = bits.iter().fold(0u32, |acc, &x| (acc << 1) | x as u32);
            assert_eq!(packed, expect);
        }
        assert_eq!(a.bit_offset(), 54);
    }

    #[test]
    fn monobit_frequency() {
        let mut c = cursor(9);
        let ones = c.bits(1_000_000).iter().filter(|&&b| b).count();
        let freq = ones as f64 / 1e6;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }
}
