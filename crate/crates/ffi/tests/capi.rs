use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use evit_core::codec::{JpegEncoder, RgbImage};
use evit_core::crypto::{CipherJpeg, MasterSecret};
use evit_core::features::extract;
use evit_core::model::{ModelConfig, ModelParams};
use evit_core::store::{self, build_index};
use evit_core::synth::natural_image;
use evit_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn last_error() -> String {
    let p = evit_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn image(seed: u64) -> RgbImage {
    natural_image(40, 24, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

unsafe fn encrypt(img: &RgbImage, master: &[u8; 32]) -> (Vec<u8>, *mut EvitKeySet) {
    let mut buf = EvitBuffer { data: ptr::null_mut(), len: 0 };
    let mut keys = ptr::null_mut();
    let s = evit_encrypt_rgb(img.pixels().as_ptr(), img.width(), img.height(), master.as_ptr(), 50, &mut buf, &mut keys);
    assert_eq!(s, EvitStatus::Ok);
    let bytes = std::slice::from_raw_parts(buf.data, buf.len).to_vec();
    evit_buffer_free(&mut buf);
    assert!(buf.data.is_null());
    (bytes, keys)
}

#[test]
fn encrypt_decrypt_round_trip() {
    let img = image(1);
    let master = [5u8; 32];
    unsafe {
        let (cipher, keys) = encrypt(&img, &master);

        let mut json = EvitBuffer { data: ptr::null_mut(), len: 0 };
        assert_eq!(evit_keyset_to_json(keys, &mut json), EvitStatus::Ok);
        let mut keys2 = ptr::null_mut();
        assert_eq!(evit_keyset_from_json(json.data, json.len, &mut keys2), EvitStatus::Ok);
        evit_buffer_free(&mut json);

        let mut rgb = EvitBuffer { data: ptr::null_mut(), len: 0 };
        let (mut w, mut h) = (0u32, 0u32);
        assert_eq!(evit_decrypt_rgb(cipher.as_ptr(), cipher.len(), keys2, &mut rgb, &mut w, &mut h), EvitStatus::Ok);
        assert_eq!((w, h), (40, 24));
        let plain = JpegEncoder::default().compress(&img).unwrap();
        let expected = evit_core::codec::decompress(&plain).unwrap();
        assert_eq!(std::slice::from_raw_parts(rgb.data, rgb.len), expected.pixels());
        evit_buffer_free(&mut rgb);

        let mut jpeg = EvitBuffer { data: ptr::null_mut(), len: 0 };
        assert_eq!(evit_decrypt_to_jpeg(cipher.as_ptr(), cipher.len(), keys, &mut jpeg), EvitStatus::Ok);
        assert_eq!(std::slice::from_raw_parts(jpeg.data, jpeg.len), plain.as_slice());
        evit_buffer_free(&mut jpeg);

        evit_keyset_free(keys);
        evit_keyset_free(keys2);
    }
}

#[test]
fn features_match_core_and_ignore_keys() {
    let img = image(2);
    unsafe {
        let (c1, k1) = encrypt(&img, &[1; 32]);
        let (c2, k2) = encrypt(&img, &[2; 32]);
        assert_ne!(c1, c2);
        let id = CString::new("a/b").unwrap();
        let mut f1 = ptr::null_mut();
        let mut f2 = ptr::null_mut();
        assert_eq!(evit_extract(c1.as_ptr(), c1.len(), id.as_ptr(), &mut f1), EvitStatus::Ok);
        assert_eq!(evit_extract(c2.as_ptr(), c2.len(), id.as_ptr(), &mut f2), EvitStatus::Ok);
        assert_eq!(evit_features_block_count(f1), 15);
        let mut g1 = vec![0u32; 522];
        let mut g2 = vec![0u32; 522];
        assert_eq!(evit_features_global(f1, g1.as_mut_ptr(), 522), EvitStatus::Ok);
        assert_eq!(evit_features_global(f2, g2.as_mut_ptr(), 522), EvitStatus::Ok);
        assert_eq!(g1, g2);
        let core = extract(&CipherJpeg::from_bytes(c1.clone()), "a/b").unwrap();
        assert_eq!(g1, core.global.as_slice());
        assert_eq!(evit_features_global(f1, g1.as_mut_ptr(), 10), EvitStatus::Mismatch);
        evit_features_free(f1);
        evit_features_free(f2);
        evit_keyset_free(k1);
        evit_keyset_free(k2);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut keys = ptr::null_mut();
        assert_eq!(evit_keyset_from_json(ptr::null(), 4, &mut keys), EvitStatus::NullPointer);
        assert!(last_error().contains("null"));
        let junk = b"{not json";
        assert_eq!(evit_keyset_from_json(junk.as_ptr(), junk.len(), &mut keys), EvitStatus::Format);
        let mut f = ptr::null_mut();
        let id = CString::new("x").unwrap();
        assert_eq!(evit_extract(junk.as_ptr(), junk.len(), id.as_ptr(), &mut f), EvitStatus::Format);
        let missing = CString::new("/nonexistent/model.evck").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(evit_model_load(missing.as_ptr(), &mut m), EvitStatus::Io);
        assert!(m.is_null());
        let mut buf = EvitBuffer { data: ptr::null_mut(), len: 0 };
        let img = [0u8; 3];
        assert_eq!(
            evit_encrypt_rgb(img.as_ptr(), 0, 1, [0u8; 32].as_ptr(), 50, &mut buf, &mut keys),
            EvitStatus::Invalid
        );
        assert_eq!(evit_result_len(ptr::null()), 0);
        assert!(evit_result_score(ptr::null(), 0).is_nan());
        evit_buffer_free(ptr::null_mut());
    }
}

#[test]
fn search_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        layers: 1,
        dim: 8,
        heads: 2,
        mlp_ratio: 2,
        n_blocks: 15,
        huff_hidden: 8,
        ..Default::default()
    };
    let params = ModelParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ck = store::write_checkpoint(&params, None).unwrap();
    let other = store::write_checkpoint(
        &ModelParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(),
        None,
    )
    .unwrap();
    let master = MasterSecret([9; 32]);
    let enc = JpegEncoder::default();
    let ciphers: Vec<Vec<u8>> = (0..6)
        .map(|i| evit_core::crypto::encrypt_adaptive(&image(10 + i), &master, &enc).unwrap().0.into_bytes())
        .collect();
    let sets: Vec<_> = ciphers
        .iter()
        .enumerate()
        .map(|(i, c)| extract(&CipherJpeg::from_bytes(c.clone()), format!("img{i}")).unwrap())
        .collect();
    let ix = build_index(&sets, &params, store::fingerprint(&ck)).unwrap();
    let (ck_path, other_path, ix_path) = (dir.path().join("m.evck"), dir.path().join("o.evck"), dir.path().join("i.evix"));
    store::atomic_write(&ck_path, &ck).unwrap();
    store::atomic_write(&other_path, &other).unwrap();
    store::atomic_write(&ix_path, &ix.to_bytes().unwrap()).unwrap();

    unsafe {
        let c = |p: &std::path::Path| CString::new(p.to_str().unwrap()).unwrap();
        let (mut m, mut o, mut x) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(evit_model_load(c(&ck_path).as_ptr(), &mut m), EvitStatus::Ok);
        assert_eq!(evit_model_load(c(&other_path).as_ptr(), &mut o), EvitStatus::Ok);
        assert_eq!(evit_index_load(c(&ix_path).as_ptr(), &mut x), EvitStatus::Ok);
        assert_eq!(evit_index_len(x), 6);
        assert_eq!(evit_model_dim(m), 8);

        let q = &ciphers[3];
        let mut r = ptr::null_mut();
        assert_eq!(evit_search(x, m, q.as_ptr(), q.len(), 3, &mut r), EvitStatus::Ok);
        assert_eq!(evit_result_len(r), 3);
        assert_eq!(CStr::from_ptr(evit_result_id(r, 0)).to_str().unwrap(), "img3");
        assert!((evit_result_score(r, 0) - 1.0).abs() < 1e-5);
        assert!(evit_result_id(r, 3).is_null());
        assert!(evit_result_seconds(r) >= 0.0);
        evit_result_free(r);

        let mut f = ptr::null_mut();
        let id = CString::new("q").unwrap();
        assert_eq!(evit_extract(q.as_ptr(), q.len(), id.as_ptr(), &mut f), EvitStatus::Ok);
        let mut v = vec![0f32; 8];
        assert_eq!(evit_embed(m, f, v.as_mut_ptr(), 8), EvitStatus::Ok);
        assert_eq!(v, ix.vector(3));
        evit_features_free(f);

        let mut r2 = ptr::null_mut();
        assert_eq!(evit_search(x, o, q.as_ptr(), q.len(), 3, &mut r2), EvitStatus::Mismatch);
        assert!(r2.is_null());
        assert!(last_error().contains("different checkpoint"));

        evit_model_free(m);
        evit_model_free(o);
        evit_index_free(x);
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/evit.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["evit_encrypt_rgb", "evit_search", "evit_last_error", "EVIT_STATUS_MISMATCH = 4"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"evit.h\"\nint main(void) { EvitBuffer b = {0, 0}; evit_buffer_free(&b); return evit_last_error() != 0; }\n",
    )
    .unwrap();
    match Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("no C compiler available, skipped syntax check: {e}"),
    }
}
