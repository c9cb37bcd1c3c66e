//! C ABI over `evit-core`.
//!
//! Every function returns an [`EvitStatus`]; on failure the message is kept
//! per thread and read with [`evit_last_error`]. Objects are opaque handles
//! released with their `_free` function. Byte outputs come back in an
//! [`EvitBuffer`] that must be released with [`evit_buffer_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use evit_core::codec::{JpegEncoder, RgbImage};
use evit_core::crypto::{self, CipherJpeg, KeySet, MasterSecret};
use evit_core::eval::RankedResult;
use evit_core::features::{self, FeatureSet};
use evit_core::model::ModelParams;
use evit_core::store::{self, RetrievalIndex};
use evit_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvitStatus {
    Ok = 0,
    Invalid = 1,
    Format = 2,
    Unsupported = 3,
    Mismatch = 4,
    Numerical = 5,
    Io = 6,
    NullPointer = 7,
    Panic = 8,
}

/// Heap bytes owned by the library.
#[repr(C)]
pub struct EvitBuffer {
    pub data: *mut u8,
    pub len: usize,
}

pub struct EvitKeySet(KeySet);

pub struct EvitFeatures(FeatureSet);

/// Encoder weights plus the fingerprint of the checkpoint they came from.
pub struct EvitModel {
    params: ModelParams<f32>,
    fingerprint: [u8; 32],
}

pub struct EvitIndex(RetrievalIndex);

pub struct EvitSearchResult {
    ids: Vec<CString>,
    scores: Vec<f64>,
    total_secs: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EvitStatus {
    match e {
        Error::Invalid(_) => EvitStatus::Invalid,
        Error::Format(_) | Error::Image(_) | Error::Json(_) => EvitStatus::Format,
        Error::Unsupported(_) => EvitStatus::Unsupported,
        Error::Mismatch(_) => EvitStatus::Mismatch,
        Error::Numerical(_) => EvitStatus::Numerical,
        Error::Io { .. } => EvitStatus::Io,
    }
}

struct Fail(EvitStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EvitStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EvitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvitStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            EvitStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(EvitStatus::Invalid, format!("{what} is not UTF-8")))
}

unsafe fn out<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn buffer(v: Vec<u8>) -> EvitBuffer {
    let mut b = v.into_boxed_slice();
    let len = b.len();
    let data = b.as_mut_ptr();
    std::mem::forget(b);
    EvitBuffer { data, len }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn evit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn evit_buffer_free(buf: *mut EvitBuffer) {
    if let Some(b) = buf.as_mut() {
        if !b.data.is_null() {
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
        }
        b.data = ptr::null_mut();
        b.len = 0;
    }
}

/// Encrypt interleaved RGB pixels (`width * height * 3` bytes) with keys
/// derived from the image and the 32-byte `master` secret.
#[no_mangle]
pub unsafe extern "C" fn evit_encrypt_rgb(
    rgb: *const u8,
    width: u32,
    height: u32,
    master: *const u8,
    quality: u8,
    out_jpeg: *mut EvitBuffer,
    out_keys: *mut *mut EvitKeySet,
) -> EvitStatus {
    guard(|| {
        let n = (width as usize) * (height as usize) * 3;
        let pixels = slice(rgb, n, "rgb")?.to_vec();
        let m: [u8; 32] = slice(master, 32, "master")?.try_into().expect("32 bytes");
        let img = RgbImage::new(width, height, pixels)?;
        let (cipher, keys) = crypto::encrypt_adaptive(&img, &MasterSecret(m), &JpegEncoder::new(quality)?)?;
        if out_jpeg.is_null() || out_keys.is_null() {
            return Err(null("output"));
        }
        out(out_jpeg, buffer(cipher.into_bytes()), "out_jpeg")?;
        out(out_keys, Box::into_raw(Box::new(EvitKeySet(keys))), "out_keys")
    })
}

#[no_mangle]
pub unsafe extern "C" fn evit_keyset_to_json(keys: *const EvitKeySet, out_json: *mut EvitBuffer) -> EvitStatus {
    guard(|| {
        let k = handle(keys, "keys")?;
        let json = serde_json::to_vec(&k.0).map_err(Error::from)?;
        out(out_json, buffer(json), "out_json")
    })
}

#[no_mangle]
pub unsafe extern "C" fn evit_keyset_from_json(json: *const u8, len: usize, out_keys: *mut *mut EvitKeySet) -> EvitStatus {
    guard(|| {
        let k: KeySet = serde_json::from_slice(slice(json, len, "json")?).map_err(Error::from)?;
        out(out_keys, Box::into_raw(Box::new(EvitKeySet(k))), "out_keys")
    })
}

#[no_mangle]
pub unsafe extern "C" fn evit_keyset_free(keys: *mut EvitKeySet) {
    if !keys.is_null() {
        drop(Box::from_raw(keys));
    }
}

/// Recover the plain JPEG byte-stream.
#[no_mangle]
pub unsafe extern "C" fn evit_decrypt_to_jpeg(
    cipher: *const u8,
    len: usize,
    keys: *const EvitKeySet,
    out_jpeg: *mut EvitBuffer,
) -> EvitStatus {
    guard(|| {
        let c = CipherJpeg::from_bytes(slice(cipher, len, "cipher")?.to_vec());
        let plain = crypto::decrypt_to_jpeg(&c, &handle(keys, "keys")?.0)?;
        out(out_jpeg, buffer(plain), "out_jpeg")
    })
}

/// Decrypt and decode to interleaved RGB.
#[no_mangle]
pub unsafe extern "C" fn evit_decrypt_rgb(
    cipher: *const u8,
    len: usize,
    keys: *const EvitKeySet,
    out_rgb: *mut EvitBuffer,
    out_width: *mut u32,
    out_height: *mut u32,
) -> EvitStatus {
    guard(|| {
        let c = CipherJpeg::from_bytes(slice(cipher, len, "cipher")?.to_vec());
        let img = crypto::decrypt_image(&c, &handle(keys, "keys")?.0)?;
        if out_rgb.is_null() || out_width.is_null() || out_height.is_null() {
            return Err(null("output"));
        }
        out(out_width, img.width(), "out_width")?;
        out(out_height, img.height(), "out_height")?;
        out(out_rgb, buffer(img.into_pixels()), "out_rgb")
    })
}

/// Cipher-domain features of one image.
#[no_mangle]
pub unsafe extern "C" fn evit_extract(
    cipher: *const u8,
    len: usize,
    image_id: *const c_char,
    out_features: *mut *mut EvitFeatures,
) -> EvitStatus {
    guard(|| {
        let id = cstr(image_id, "image_id")?;
        let c = CipherJpeg::from_bytes(slice(cipher, len, "cipher")?.to_vec());
        let fs = features::extract(&c, id)?;
        out(out_features, Box::into_raw(Box::new(EvitFeatures(fs))), "out_features")
    })
}

#[no_mangle]
pub unsafe extern "C" fn evit_features_block_count(f: *const EvitFeatures) -> usize {
    f.as_ref().map_or(0, |f| f.0.blocks.len())
}

/// Copy the 522 global Huffman-row counts into `out_counts` (length `len`).
#[no_mangle]
pub unsafe extern "C" fn evit_features_global(f: *const EvitFeatures, out_counts: *mut u32, len: usize) -> EvitStatus {
    guard(|| {
        let g = handle(f, "features")?.0.global.as_slice();
        if out_counts.is_null() {
            return Err(null("out_counts"));
        }
        if len != g.len() {
            return Err(Fail(EvitStatus::Mismatch, format!("need {} slots, got {len}", g.len())));
        }
        ptr::copy_nonoverlapping(g.as_ptr(), out_counts, len);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn evit_features_free(f: *mut EvitFeatures) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

#[no_mangle]
pub unsafe extern "C" fn evit_model_load(path: *const c_char, out_model: *mut *mut EvitModel) -> EvitStatus {
    guard(|| {
        let bytes = store::read_file(Path::new(cstr(path, "path")?))?;
        let ck = store::read_checkpoint(&bytes)?;
        let m = EvitModel {
            params: ck.params,
            fingerprint: store::fingerprint(&bytes),
        };
        out(out_model, Box::into_raw(Box::new(m)), "out_model")
    })
}

#[no_mangle]
pub unsafe extern "C" fn evit_model_dim(m: *const EvitModel) -> usize {
    m.as_ref().map_or(0, |m| m.params.config.dim)
}

#[no_mangle]
pub unsafe extern "C" fn evit_model_free(m: *mut EvitModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Unit-norm representation of `f` written to `out_vec` (length `evit_model_dim`).
#[no_mangle]
pub unsafe extern "C" fn evit_embed(
    m: *const EvitModel,
    f: *const EvitFeatures,
    out_vec: *mut f32,
    len: usize,
) -> EvitStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let v = m.params.embed(&handle(f, "features")?.0)?;
        if out_vec.is_null() {
            return Err(null("out_vec"));
        }
        if len != v.len() {
            return Err(Fail(EvitStatus::Mismatch, format!("need {} slots, got {len}", v.len())));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out_vec, len);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn evit_index_load(path: *const c_char, out_index: *mut *mut EvitIndex) -> EvitStatus {
    guard(|| {
        let ix = RetrievalIndex::from_bytes(&store::read_file(Path::new(cstr(path, "path")?))?)?;
        out(out_index, Box::into_raw(Box::new(EvitIndex(ix))), "out_index")
    })
}

#[no_mangle]
pub unsafe extern "C" fn evit_index_len(ix: *const EvitIndex) -> usize {
    ix.as_ref().map_or(0, |i| i.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn evit_index_free(ix: *mut EvitIndex) {
    if !ix.is_null() {
        drop(Box::from_raw(ix));
    }
}

/// Top-`k` matches for a cipher JPEG. Fails with `Mismatch` when the index
/// was built by a different checkpoint.
#[no_mangle]
pub unsafe extern "C" fn evit_search(
    ix: *const EvitIndex,
    m: *const EvitModel,
    cipher: *const u8,
    len: usize,
    k: usize,
    out_result: *mut *mut EvitSearchResult,
) -> EvitStatus {
    guard(|| {
        let (ix, m) = (handle(ix, "index")?, handle(m, "model")?);
        let c = CipherJpeg::from_bytes(slice(cipher, len, "cipher")?.to_vec());
        let o = store::search(&c, "query", &ix.0, &m.params, &m.fingerprint, k)?;
        let RankedResult { items, .. } = o.result;
        let mut ids = Vec::with_capacity(items.len());
        let mut scores = Vec::with_capacity(items.len());
        for (id, s) in items {
            ids.push(CString::new(id).map_err(|_| Fail(EvitStatus::Format, "id contains NUL".into()))?);
            scores.push(s);
        }
        let r = EvitSearchResult {
            ids,
            scores,
            total_secs: o.total_secs,
        };
        out(out_result, Box::into_raw(Box::new(r)), "out_result")
    })
}

#[no_mangle]
pub unsafe extern "C" fn evit_result_len(r: *const EvitSearchResult) -> usize {
    r.as_ref().map_or(0, |r| r.ids.len())
}

/// Id at rank `i` (0 = best), or NULL when out of range. Owned by the result.
#[no_mangle]
pub unsafe extern "C" fn evit_result_id(r: *const EvitSearchResult, i: usize) -> *const c_char {
    r.as_ref().and_then(|r| r.ids.get(i)).map_or(ptr::null(), |s| s.as_ptr())
}

/// Cosine score at rank `i`, NaN when out of range.
#[no_mangle]
pub unsafe extern "C" fn evit_result_score(r: *const EvitSearchResult, i: usize) -> f64 {
    r.as_ref().and_then(|r| r.scores.get(i)).copied().unwrap_or(f64::NAN)
}

/// Wall-clock seconds for extraction, forward pass and ranking.
#[no_mangle]
pub unsafe extern "C" fn evit_result_seconds(r: *const EvitSearchResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.total_secs)
}

#[no_mangle]
pub unsafe extern "C" fn evit_result_free(r: *mut EvitSearchResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
