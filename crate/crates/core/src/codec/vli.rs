//! Variable-length integer (magnitude) codes.
//!
//! A value `v` with category `c` is coded on `c` bits: `v` itself when
//! positive, the one's complement of `|v|` when negative.

use crate::error::{Error, Result};

/// Largest magnitude representable with 8-bit samples (DC differences).
pub const MAX_MAGNITUDE: i32 = 2047;

/// Minimal bit count of `|value|`.
#[inline]
pub fn category(value: i32) -> u8 {
    (32 - value.unsigned_abs().leading_zeros()) as u8
}

pub fn encode(value: i32) -> Result<(u8, u16)> {
    if value.abs() > MAX_MAGNITUDE {
        return Err(Error::invalid(format!(
            "value {value} outside the JPEG range [-{MAX_MAGNITUDE}, {MAX_MAGNITUDE}]"
        )));
    }
    let cat = category(value);
    if cat == 0 {
        return Ok((0, 0));
    }
    let mask = (1u32 << cat) - 1;
    let bits = if value > 0 {
        value as u32
    } else {
        !(value.unsigned_abs()) & mask
    };
    Ok((cat, (bits & mask) as u16))
}

/// Inverse of [`encode`]; `bits` must fit in `category` bits.
pub fn decode(category: u8, bits: u16) -> Result<i32> {
    if category > 11 {
        return Err(Error::format(format!("VLI category {category} > 11")));
    }
    if category == 0 {
        return Ok(0);
    }
    if bits as u32 >> category != 0 {
        return Err(Error::format(format!(
            "VLI bits {bits:#b} wider than category {category}"
        )));
    }
    let bits = bits as i32;
    // leading 0 marks a negative value
    if bits < 1 << (category - 1) {
        Ok(bits - (1 << category) + 1)
    } else {
        Ok(bits)
    }
}

/// Render `len` low bits MSB-first, e.g. for tests and diagnostics.
pub fn bit_string(bits: u32, len: u8) -> String {
    (0..len)
        .rev()
        .map(|i| if bits >> i & 1 == 1 { '1' } else { '0' })
        .collect()
}
