//! One PASS/FAIL line per primary acceptance criterion.
//!
//! Run with `cargo test -p evit-core --test acceptance -- --nocapture` to see
//! the report; the test fails if any criterion fails.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use evit_core::augment::{augment_view, AugmentConfig};
use evit_core::codec::bitio::BitReader;
use evit_core::codec::entropy::{decode_block, encode_block};
use evit_core::codec::{vli, zigzag, Component, HuffmanTables, JpegEncoder, QuantizedBlock, RgbImage};
use evit_core::crypto::{decrypt_coefficients, derive_keyset_for_image, encrypt_adaptive, encrypt_image, MasterSecret};
use evit_core::eval::{
    cipher_view, differential_attack_trial, evaluate_map, psnr_luma, rank_by_cosine, RqMode,
};
use evit_core::features::{extract, FeatureSet, HuffFreqVector, GLOBAL_DIM};
use evit_core::model::{FirstToken, ModelConfig, ModelInput, ModelParams, Scalar};
use evit_core::store::manifest::split_items;
use evit_core::store::{fingerprint, search, write_checkpoint, write_features, RetrievalIndex, Split, SplitMode};
use evit_core::synth::{natural_image, texture_image, TEXTURE_CLASSES};
use evit_core::training::loss::ArcFaceHead;
use evit_core::training::{
    arcface_batch, contrastive_batch, fine_tune_supervised, init_arcface_head, mix_seed, new_model,
    train_unsupervised, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(r: &mut ChaCha8Rng) -> RgbImage {
    let w = r.gen_range(8..=96);
    let h = r.gen_range(8..=96);
    natural_image(w, h, r).unwrap()
}

fn random_master(r: &mut ChaCha8Rng) -> MasterSecret {
    MasterSecret(r.gen())
}

fn key_invariance() -> Outcome {
    let enc = JpegEncoder::new(50).unwrap();
    let mut r = rng(1);
    for i in 0..50 {
        let img = random_image(&mut r);
        let mut reference: Option<Vec<u8>> = None;
        for _ in 0..5 {
            let m = random_master(&mut r);
            let (cipher, _) = encrypt_adaptive(&img, &m, &enc).unwrap();
            let bytes = write_features(&[extract(&cipher, "img").unwrap()]).unwrap();
            match &reference {
                None => reference = Some(bytes),
                Some(b) if *b != bytes => return Err(format!("image {i}: features differ between keys")),
                _ => {}
            }
        }
    }
    Ok("50 images x 5 master secrets, feature files byte-identical".into())
}

fn format_compliance() -> Outcome {
    let enc = JpegEncoder::new(50).unwrap();
    let mut r = rng(2);
    let mut ok = 0;
    for i in 0..100 {
        let img = random_image(&mut r);
        let (cipher, _) = encrypt_adaptive(&img, &random_master(&mut r), &enc).unwrap();
        let mut d = jpeg_decoder::Decoder::new(cipher.as_bytes());
        match d.decode() {
            Ok(px) => {
                let info = d.info().unwrap();
                let expected = (img.width() * img.height() * 3) as usize;
                if (info.width as u32, info.height as u32) != (img.width(), img.height()) || px.len() != expected {
                    return Err(format!("image {i}: decoder reports wrong geometry"));
                }
                ok += 1;
            }
            Err(e) => return Err(format!("image {i}: independent decoder failed: {e}")),
        }
    }
    Ok(format!("{ok}/100 cipher-JPEGs decoded by jpeg-decoder"))
}

fn lossless_round_trip() -> Outcome {
    let enc = JpegEncoder::new(50).unwrap();
    let mut r = rng(3);
    for i in 0..100 {
        let img = random_image(&mut r);
        let keys = derive_keyset_for_image(&img, &random_master(&mut r)).unwrap();
        let cipher = encrypt_image(&img, &keys, &enc).unwrap();
        if decrypt_coefficients(&cipher, &keys).unwrap() != enc.coefficients(&img).unwrap() {
            return Err(format!("image {i}: decrypted coefficients differ"));
        }
    }
    Ok("100 images, decrypted coefficients equal plain JPEG coefficients".into())
}

fn codec_consistency() -> Outcome {
    let tables = HuffmanTables::typical();
    let mut r = rng(4);
    let blocks: Vec<QuantizedBlock> = (0..10_000)
        .map(|i| {
            let mut coeffs = [0i32; 64];
            coeffs[0] = r.gen_range(-1024..=1023);
            let density = r.gen_range(0.0..1.0);
            for c in coeffs.iter_mut().skip(1) {
                if r.gen_bool(density) {
                    *c = match r.gen_range(0..3) {
                        0 => r.gen_range(-1023..=1023),
                        _ => r.gen_range(-3..=3),
                    };
                }
            }
            QuantizedBlock { coeffs, component: Component::ALL[i % 3] }
        })
        .collect();
    let mut bits = Vec::new();
    let mut prev = [0i32; 3];
    let mut writer_bits = 0u64;
    for b in &blocks {
        let c = b.component.index();
        let (w, dc) = encode_block(b, prev[c], &tables).map_err(|e| e.to_string())?;
        prev[c] = dc;
        writer_bits += w.bit_len();
        bits.extend(w.to_bit_string().bytes());
    }
    let packed: Vec<u8> = bits
        .chunks(8)
        .map(|ch| ch.iter().chain(std::iter::repeat(&b'1')).take(8).fold(0u8, |acc, &c| acc << 1 | (c - b'0')))
        .collect();
    let mut reader = BitReader::new(&packed);
    let mut prev = [0i32; 3];
    for (i, b) in blocks.iter().enumerate() {
        let c = b.component.index();
        let (decoded, dc) = decode_block(&mut reader, b.component, prev[c], &tables).map_err(|e| e.to_string())?;
        prev[c] = dc;
        if decoded != *b {
            return Err(format!("block {i} did not round-trip"));
        }
    }
    if reader.position() != writer_bits {
        return Err("decoder consumed a different number of bits".into());
    }
    let mut zz = [0i32; 64];
    zz.iter_mut().enumerate().for_each(|(i, v)| *v = i as i32 * 7 - 100);
    if zigzag::inverse(&zigzag::forward(&zz)) != zz || zigzag::forward(&zigzag::inverse(&zz)) != zz {
        return Err("zig-zag is not an involution pair".into());
    }
    let perm = zigzag::forward(&std::array::from_fn::<i32, 64, _>(|i| i as i32));
    if perm.iter().collect::<HashSet<_>>().len() != 64 {
        return Err("zig-zag is not a permutation".into());
    }
    for v in -2047..=2047 {
        let (cat, b) = vli::encode(v).map_err(|e| e.to_string())?;
        if vli::decode(cat, b).map_err(|e| e.to_string())? != v {
            return Err(format!("VLI round trip failed at {v}"));
        }
    }
    Ok("10^4 random blocks, zig-zag inverse pair, VLI over [-2047, 2047]: all exact".into())
}

fn tiny_features(r: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<FeatureSet> {
    (0..count)
        .map(|i| FeatureSet {
            image_id: format!("t{i}"),
            blocks: (0..n).map(|_| std::array::from_fn(|_| r.gen_range(0..=11))).collect(),
            global: HuffFreqVector((0..GLOBAL_DIM).map(|_| r.gen_range(0..40)).collect()),
        })
        .collect()
}

fn unit<F: Scalar>(r: &mut ChaCha8Rng, d: usize) -> Vec<F> {
    let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| F::from_f64(x / n).unwrap()).collect()
}

struct GradProblem {
    params: ModelParams<f64>,
    inputs: Vec<ModelInput<f64>>,
    keys: Vec<Vec<f64>>,
    negatives: Vec<Vec<f64>>,
    head: ArcFaceHead<f64>,
    labels: Vec<usize>,
    seeds: Vec<u64>,
}

fn grad_problem(layers: usize, first_token: FirstToken, projection_head: bool, seed: u64) -> GradProblem {
    let cfg = ModelConfig {
        layers,
        dim: 8,
        heads: 2,
        mlp_ratio: 2,
        dropout: 0.1,
        n_blocks: 4,
        huff_hidden: 8,
        first_token,
        projection_head,
        standardize: true,
        init_std: 0.3,
        ..ModelConfig::default()
    };
    let mut r = rng(seed);
    let mut params = ModelParams::<f64>::init(&cfg, &mut r).unwrap();
    let data = tiny_features(&mut r, 4, 6);
    params.fit_input_stats(&data).unwrap();
    let out = cfg.dim;
    let inputs: Vec<_> = data[..4].iter().map(|f| params.prepare(f).unwrap()).collect();
    let keys = (0..4).map(|_| unit(&mut r, out)).collect();
    let negatives = (0..5).map(|_| unit(&mut r, out)).collect();
    let head = init_arcface_head(3, out, 8.0, 0.3, seed).unwrap().cast::<f64>();
    GradProblem { params, inputs, keys, negatives, head, labels: vec![0, 1, 2, 1], seeds: vec![11, 12, 13, 14] }
}

/// Analytic gradients in precision `F` for both losses, flattened with the
/// ArcFace center gradient appended to the second.
fn analytic<F: Scalar>(p: &GradProblem) -> [Vec<f64>; 2] {
    let params = p.params.cast::<F>();
    let cast_in = |v: &Vec<f64>| v.iter().map(|&x| F::from_f64(x).unwrap()).collect::<Vec<F>>();
    let inputs: Vec<ModelInput<F>> =
        p.inputs.iter().map(|i| ModelInput { blocks: cast_in(&i.blocks), global: cast_in(&i.global) }).collect();
    let keys: Vec<Vec<F>> = p.keys.iter().map(cast_in).collect();
    let negs: Vec<Vec<F>> = p.negatives.iter().map(cast_in).collect();
    let flat = |g: &ModelParams<F>| -> Vec<f64> {
        g.tensors()
            .into_iter()
            .filter(|(_, k, _)| k.trainable())
            .flat_map(|(_, _, t)| t.data.iter().map(|v| v.to_f64().unwrap()).collect::<Vec<_>>())
            .collect()
    };
    let (_, gc) = contrastive_batch(&params, &inputs, &keys, &negs, 0.2, true, Some(&p.seeds)).unwrap();
    let head = p.head.cast::<F>();
    let (_, ga, gcenters) = arcface_batch(&params, &head, &inputs, &p.labels, Some(&p.seeds)).unwrap();
    let mut a = flat(&ga);
    a.extend(gcenters.data.iter().map(|v| v.to_f64().unwrap()));
    [flat(&gc), a]
}

fn losses(p: &GradProblem, params: &ModelParams<f64>, head: &ArcFaceHead<f64>) -> [f64; 2] {
    let (c, _) = contrastive_batch(params, &p.inputs, &p.keys, &p.negatives, 0.2, true, Some(&p.seeds)).unwrap();
    let (a, _, _) = arcface_batch(params, head, &p.inputs, &p.labels, Some(&p.seeds)).unwrap();
    [c, a]
}

/// Central differences in f64 for every trainable scalar and every center.
fn finite_differences(p: &GradProblem, h: f64) -> [Vec<f64>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    let trainable: Vec<usize> = p
        .params
        .tensors()
        .into_iter()
        .enumerate()
        .filter(|(_, (_, k, _))| k.trainable())
        .map(|(i, _)| i)
        .collect();
    for &ti in &trainable {
        let len = p.params.tensors()[ti].2.len();
        for j in 0..len {
            let mut plus = p.params.clone();
            plus.tensors_mut()[ti].1.data[j] += h;
            let mut minus = p.params.clone();
            minus.tensors_mut()[ti].1.data[j] -= h;
            let (lp, lm) = (losses(p, &plus, &p.head), losses(p, &minus, &p.head));
            out[0].push((lp[0] - lm[0]) / (2.0 * h));
            out[1].push((lp[1] - lm[1]) / (2.0 * h));
        }
    }
    for j in 0..p.head.centers.len() {
        let mut plus = p.head.clone();
        plus.centers.data[j] += h;
        let mut minus = p.head.clone();
        minus.centers.data[j] -= h;
        out[1].push((losses(p, &p.params, &plus)[1] - losses(p, &p.params, &minus)[1]) / (2.0 * h));
    }
    out
}

/// Largest relative error. Entries smaller than `floor` are measured against
/// `floor`: single precision cannot resolve them below eps times the largest
/// gradient of the same loss.
fn max_rel_err(analytic: &[f64], fd: &[f64], floor: f64) -> f64 {
    analytic.iter().zip(fd).map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor)).fold(0.0, f64::max)
}

fn gradient_correctness() -> Outcome {
    let mut worst = [0.0f64; 2];
    let mut raw = 0.0f64;
    let mut count = 0;
    for (layers, first, proj, seed) in [(1, FirstToken::Huffman, true, 21), (2, FirstToken::Ones, false, 22), (2, FirstToken::Huffman, false, 23)] {
        let p = grad_problem(layers, first, proj, seed);
        let fd = finite_differences(&p, 1e-5);
        let a64 = analytic::<f64>(&p);
        let a32 = analytic::<f32>(&p);
        for l in 0..2 {
            let scale = fd[l].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            worst[0] = worst[0].max(max_rel_err(&a32[l], &fd[l], 1e-3 * scale));
            worst[1] = worst[1].max(max_rel_err(&a64[l], &fd[l], 1e-3 * scale));
            raw = raw.max(max_rel_err(&a32[l], &fd[l], 1e-12));
        }
        count += fd[0].len() + fd[1].len();
    }
    let line = format!(
        "{count} gradient entries vs f64 central differences; max rel err f32 {:.2e} (< 1e-3), f64 {:.2e} (< 1e-6); \
         floor 1e-3 x max|grad| (unfloored f32 worst {raw:.2e})",
        worst[0], worst[1]
    );
    if worst[0] < 1e-3 && worst[1] < 1e-6 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn brute_force_map(vectors: &[Vec<f32>], labels: &[usize], k: usize) -> f64 {
    let n = vectors.len();
    let ids: Vec<String> = (0..n).map(|i| format!("item{i:02}")).collect();
    let mut total = 0.0;
    let mut queries = 0;
    for q in 0..n {
        let mut others: Vec<(f64, &str, usize)> = (0..n)
            .filter(|&j| j != q)
            .map(|j| {
                let s: f64 = vectors[q].iter().zip(&vectors[j]).map(|(&a, &b)| a as f64 * b as f64).sum();
                (s, ids[j].as_str(), j)
            })
            .collect();
        let relevant = others.iter().filter(|o| labels[o.2] == labels[q]).count();
        if relevant == 0 {
            continue;
        }
        others.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let mut hits = 0;
        let mut sum = 0.0;
        for (rank, o) in others.iter().take(k).enumerate() {
            if labels[o.2] == labels[q] {
                hits += 1;
                sum += hits as f64 / (rank + 1) as f64;
            }
        }
        total += sum / relevant.min(k) as f64;
        queries += 1;
    }
    total / queries as f64
}

fn metric_oracle() -> Outcome {
    let mut r = rng(6);
    let vecs: Vec<Vec<f32>> = (0..20).map(|_| unit::<f32>(&mut r, 6)).collect();
    let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
    let ids: Vec<String> = (0..20).map(|i| format!("item{i:02}")).collect();
    let names: Vec<String> = labels.iter().map(|l| format!("class{l}")).collect();
    let flat: Vec<f32> = vecs.concat();
    for k in [1, 3, 5, 10, 19, 100] {
        let got = evaluate_map(&ids, &flat, &names, k, RqMode::MinRelevantK).unwrap().map;
        let want = brute_force_map(&vecs, &labels, k);
        if got != want {
            return Err(format!("mAP@{k}: harness {got} vs brute force {want}"));
        }
    }
    let dim = 16;
    let mut base: Vec<Vec<f32>> = (0..1000).map(|_| unit::<f32>(&mut r, dim)).collect();
    for i in 0..50 {
        base[500 + i] = base[i].clone();
    }
    let ids: Vec<String> = (0..1000).map(|i| format!("v{i:04}")).collect();
    let flat: Vec<f32> = base.concat();
    for q in 0..25 {
        let query = if q < 5 { base[q].clone() } else { unit::<f32>(&mut r, dim) };
        let exclude = (q % 2 == 0).then(|| ids[q].as_str());
        for k in [1, 10, 100, 1000] {
            let got = rank_by_cosine("q", &query, &ids, &flat, k, exclude).unwrap();
            let mut scan: Vec<(String, f64)> = (0..1000)
                .filter(|&i| Some(ids[i].as_str()) != exclude)
                .map(|i| (ids[i].clone(), query.iter().zip(&base[i]).map(|(&a, &b)| a as f64 * b as f64).sum()))
                .collect();
            scan.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scan.truncate(k);
            if got.items != scan {
                return Err(format!("query {q}, K={k}: ranking differs from exhaustive scan"));
            }
        }
    }
    Ok("mAP@K equals brute force on 20 items / 4 classes; ranking equals exhaustive scan on 1000 vectors".into())
}

/// The same one-pixel trial decoded by jpeg-decoder, which (like libjpeg)
/// wraps out-of-range samples where the crate's own decoder clamps them.
fn standard_decoder_trial(img: &RgbImage, master: &MasterSecret, enc: &JpegEncoder, r: &mut ChaCha8Rng) -> (f64, f64) {
    let mut other = img.clone();
    let (x, y, ch) = (r.gen_range(0..img.width()), r.gen_range(0..img.height()), r.gen_range(0..3));
    let mut p = other.pixel(x, y);
    p[ch] = if p[ch] == 255 { 254 } else { p[ch] + 1 };
    other.set_pixel(x, y, p);
    let decode = |im: &RgbImage| -> Vec<u8> {
        let cipher = encrypt_image(im, &derive_keyset_for_image(im, master).unwrap(), enc).unwrap();
        jpeg_decoder::Decoder::new(cipher.as_bytes()).decode().unwrap()
    };
    let (a, b) = (decode(img), decode(&other));
    let n = a.len() as f64;
    let changed = a.iter().zip(&b).filter(|(x, y)| x != y).count() as f64;
    let diff: f64 = a.iter().zip(&b).map(|(&x, &y)| (x as f64 - y as f64).abs() / 255.0).sum();
    (100.0 * changed / n, 100.0 * diff / n)
}

fn crypto_band() -> Outcome {
    let enc = JpegEncoder::new(50).unwrap();
    let master = MasterSecret([0x5a; 32]);
    let (mut psnr_sum, mut npcr, mut uaci, mut trials) = (0.0, 0.0, 0.0, 0usize);
    let (mut std_npcr, mut std_uaci) = (0.0, 0.0);
    let n_images = 24;
    for i in 0..n_images {
        let img = natural_image(187, 126, &mut rng(mix_seed(0, &[0xc0, i]))).unwrap();
        let cipher = cipher_view(&img, &master, &enc).unwrap();
        psnr_sum += psnr_luma(&img, &cipher).unwrap().unwrap_or(f64::INFINITY);
        for t in 0..3 {
            let d = differential_attack_trial(&img, &master, &enc, true, &mut rng(mix_seed(0, &[0xd1ff, i, t]))).unwrap();
            npcr += d.npcr;
            uaci += d.uaci;
            let (n, u) = standard_decoder_trial(&img, &master, &enc, &mut rng(mix_seed(0, &[0xd1ff, i, t])));
            std_npcr += n;
            std_uaci += u;
            trials += 1;
        }
    }
    let t = trials as f64;
    let (psnr, npcr, uaci) = (psnr_sum / n_images as f64, npcr / t, uaci / t);
    let line = format!(
        "{n_images} images 187x126, {trials} trials: mean PSNR {psnr:.2} dB (< 20), NPCR {npcr:.2}% (> 90), \
         UACI {uaci:.2}% (in [40, 55]); for reference, jpeg-decoder gives NPCR {:.2}%, UACI {:.2}%",
        std_npcr / t,
        std_uaci / t
    );
    if psnr < 20.0 && npcr > 90.0 && (40.0..=55.0).contains(&uaci) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn training_sanity() -> Outcome {
    let t0 = Instant::now();
    let enc = JpegEncoder::new(50).unwrap();
    let master = MasterSecret([7; 32]);
    let mut items = Vec::new();
    let mut feats = HashMap::new();
    for c in 0..3u64 {
        for i in 0..100u64 {
            let img = texture_image(c as usize, 128, &mut rng(mix_seed(0, &[c, i]))).unwrap();
            let id = format!("{}/{i:03}", TEXTURE_CLASSES[c as usize]);
            let (cipher, _) = encrypt_adaptive(&img, &master, &enc).unwrap();
            feats.insert(id.clone(), extract(&cipher, id.clone()).unwrap());
            items.push((id.clone(), id, TEXTURE_CLASSES[c as usize].to_string()));
        }
    }
    let manifest = split_items(items, SplitMode::ClosedSet, 0.7, 0).unwrap();
    let part = |s| -> Vec<FeatureSet> { manifest.split(s).map(|e| feats[&e.id].clone()).collect() };
    let (train, test) = (part(Split::Train), part(Split::Test));
    let cfg = ModelConfig { layers: 1, dim: 32, heads: 2, mlp_ratio: 2, n_blocks: 256, huff_hidden: 64, standardize: true, ..Default::default() };
    let unsup = TrainConfig { queue_size: 140, batch_size: 14, total_epochs: 50, warmup_epochs: 2, lr_peak: 0.05, ..TrainConfig::unsupervised() };
    let aug = AugmentConfig::default();
    let init = new_model(&cfg, &train, 0).unwrap();
    let pre = train_unsupervised(&train, init, &unsup, &aug, &mut |_, _, _| Ok(())).unwrap();
    let (first, last) = (pre.history[0].loss, pre.history.last().unwrap().loss);
    let drop = 1.0 - last / first;
    let labels: Vec<usize> = train
        .iter()
        .map(|f| TEXTURE_CLASSES.iter().position(|c| f.image_id.starts_with(c)).unwrap())
        .collect();
    let sup = TrainConfig { total_epochs: 30, warmup_epochs: 2, lr_peak: 0.05, ..TrainConfig::supervised() };
    let tuned = fine_tune_supervised(&train, &labels, 3, pre.params, &sup, &aug, &mut |_, _, _| Ok(())).unwrap();
    let ids: Vec<String> = test.iter().map(|f| f.image_id.clone()).collect();
    let names: Vec<String> = ids.iter().map(|i| i.split('/').next().unwrap().to_string()).collect();
    let vecs: Vec<f32> = test.iter().flat_map(|f| tuned.params.embed(f).unwrap()).collect();
    let map = evaluate_map(&ids, &vecs, &names, 10, RqMode::MinRelevantK).unwrap().map;
    let secs = t0.elapsed().as_secs_f64();
    let line = format!(
        "{} train / {} test: unsupervised loss {first:.3} -> {last:.3} ({:.0}% drop, >= 30%), test mAP@10 {map:.3} (>= 0.8), {secs:.0} s",
        train.len(),
        test.len(),
        drop * 100.0
    );
    if drop >= 0.3 && map >= 0.8 && secs < 1800.0 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn ablation_hooks() -> Outcome {
    let mut r = rng(9);
    let data = tiny_features(&mut r, 16, 8);
    let base = ModelConfig { layers: 2, dim: 16, heads: 2, mlp_ratio: 2, n_blocks: 16, huff_hidden: 16, dropout: 0.0, ..Default::default() };
    let huff = ModelParams::<f32>::init(&base, &mut rng(10)).unwrap();
    let ones = ModelParams::<f32>::init(&ModelConfig { first_token: FirstToken::Ones, ..base.clone() }, &mut rng(10)).unwrap();
    if ones.huffman.is_some() || huff.huffman.is_none() {
        return Err("first-token switch did not change the parameter set".into());
    }
    for f in &data {
        if huff.embed(f).unwrap() == ones.embed(f).unwrap() {
            return Err(format!("{}: all-ones first token gave the same representation", f.image_id));
        }
    }
    let mut other = data[0].clone();
    other.global = HuffFreqVector(other.global.0.iter().map(|v| v + 5).collect());
    if ones.embed(&data[0]).unwrap() != ones.embed(&other).unwrap() {
        return Err("all-ones model still reads the global histogram".into());
    }
    let off = AugmentConfig::disabled();
    for (i, f) in data.iter().enumerate() {
        let q = augment_view(f, &off, &mut rng(100 + i as u64)).unwrap();
        let k = augment_view(f, &off, &mut rng(200 + i as u64)).unwrap();
        if q != *f || k != *f {
            return Err("disabled augmentation altered a view".into());
        }
        let qi = huff.prepare(&q).unwrap();
        let ki = huff.prepare(&k).unwrap();
        let (hq, _) = huff.forward(&qi, Some(&mut rng(300 + i as u64))).unwrap();
        let (hk, _) = huff.forward(&ki, Some(&mut rng(400 + i as u64))).unwrap();
        if hq != hk {
            return Err("views differ with augmentation off and dropout 0".into());
        }
    }
    Ok("all-ones token changes representations; views identical with augmentation off and dropout 0".into())
}

fn search_latency() -> Outcome {
    let mut r = rng(12);
    let cfg = ModelConfig::default();
    let params = ModelParams::<f32>::init(&cfg, &mut r).unwrap();
    let fp = fingerprint(&write_checkpoint(&params, None).unwrap());
    let dim = cfg.dim;
    let n = 10_000;
    let ids: Vec<String> = (0..n).map(|i| format!("img{i:05}")).collect();
    let vectors: Vec<f32> = (0..n).flat_map(|_| unit::<f32>(&mut r, dim)).collect();
    let index = RetrievalIndex::new(dim, ids, vectors, fp).unwrap();
    let img = natural_image(187, 126, &mut r).unwrap();
    let (cipher, _) = encrypt_adaptive(&img, &MasterSecret([3; 32]), &JpegEncoder::new(50).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let t0 = Instant::now();
        let out = search(&cipher, "query", &index, &params, &fp, 100).unwrap();
        worst = worst.max(t0.elapsed().as_secs_f64());
        if out.result.items.len() != 100 {
            return Err("search returned the wrong number of results".into());
        }
    }
    let line = format!(
        "{n} vectors, D={dim}, {} layers, {} blocks: slowest of 5 queries {:.3} s (< 1 s)",
        cfg.layers, cfg.n_blocks, worst
    );
    if worst < 1.0 {
        Ok(line)
    } else {
        Err(line)
    }
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, Check); 10] = [
        ("key invariance", key_invariance),
        ("format compliance", format_compliance),
        ("lossless round trip", lossless_round_trip),
        ("codec self-consistency", codec_consistency),
        ("gradient correctness", gradient_correctness),
        ("metric oracle equivalence", metric_oracle),
        ("encryption security band", crypto_band),
        ("training sanity", training_sanity),
        ("ablation hooks", ablation_hooks),
        ("search latency", search_latency),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                println!("FAIL  {name}: {detail} [{secs:.1} s]");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
