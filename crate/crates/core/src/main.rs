use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use evit_core::codec::{decompress, JpegEncoder, RgbImage};
use evit_core::config::RunConfig;
use evit_core::crypto::{decrypt_image, decrypt_to_jpeg, encrypt_adaptive, CipherJpeg, KeySet, MasterSecret};
use evit_core::eval::{self, crypto_report, differential_attack_trial, image_crypto_stats, RqMode};
use evit_core::features::{extract, FeatureSet};
use evit_core::store::manifest::{image_id, list_images};
use evit_core::store::{self, DatasetManifest, RetrievalIndex, Split, SplitMode};
use evit_core::model::ModelParams;
use evit_core::training::{self, ArcFaceHead, EpochStats, TrainOutcome};
use evit_core::{synth, Error, Result};

#[derive(Parser)]
#[command(name = "evit", version, about = "Encrypted JPEG retrieval toolkit")]
struct Cli {
    /// Overrides the training and augmentation seeds from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON or key=value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct KeyArg {
    /// 64 hex digits.
    #[arg(long, env = "EVIT_MASTER_KEY", hide_env_values = true)]
    master_key: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encrypt plain images into format-compliant cipher JPEGs.
    Encrypt {
        #[arg(long, visible_alias = "in")]
        input: PathBuf,
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        /// Directory for the per-image key files.
        #[arg(long)]
        keys: PathBuf,
        #[command(flatten)]
        key: KeyArg,
    },
    /// Decrypt cipher JPEGs with their key files.
    Decrypt {
        #[arg(long, visible_alias = "in")]
        input: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        /// Write decoded PNGs instead of plain JPEGs.
        #[arg(long)]
        png: bool,
    },
    /// Extract cipher-domain features into a feature file.
    Extract {
        #[arg(long, visible_alias = "in")]
        input: PathBuf,
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
    },
    /// Build a train/test manifest from a directory of class folders.
    Split {
        #[arg(long, visible_alias = "in")]
        input: PathBuf,
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        #[arg(long, default_value = "closed_set")]
        mode: SplitMode,
        #[arg(long, default_value_t = 0.7)]
        fraction: f64,
    },
    /// Unsupervised contrastive pre-training.
    TrainUnsup {
        #[arg(long)]
        features: PathBuf,
        /// Restrict training to the manifest's train split.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Supervised ArcFace fine-tuning from a checkpoint.
    TrainSup {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Embed cipher images (or a feature file) into a retrieval index.
    Index {
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        ciphers: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
    },
    /// Rank indexed images against one cipher query.
    Search {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// mAP@K of an index using manifest labels; per-query CSV plus JSON summary.
    EvalMap {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value = "min-relevant-k")]
        rq: RqArg,
        /// Per-query AP CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// PSNR, histogram and differential-attack statistics.
    EvalCrypto {
        #[arg(long)]
        plain: PathBuf,
        #[arg(long)]
        cipher: PathBuf,
        /// Differential trials (needs the master key).
        #[arg(long, default_value_t = 0)]
        trials: usize,
        #[arg(long, env = "EVIT_MASTER_KEY", hide_env_values = true)]
        master_key: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the synthetic three-class texture corpus.
    Synth {
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 128)]
        size: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RqArg {
    MinRelevantK,
    Retrieved,
    AllRelevant,
}

impl From<RqArg> for RqMode {
    fn from(r: RqArg) -> Self {
        match r {
            RqArg::MinRelevantK => RqMode::MinRelevantK,
            RqArg::Retrieved => RqMode::Retrieved,
            RqArg::AllRelevant => RqMode::AllRelevant,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.finetune.seed = s;
        cfg.augment.seed = s;
    }
    Ok(cfg)
}

/// `(path, id)` for a single file or every image below a directory.
fn inputs(input: &Path) -> Result<Vec<(PathBuf, String)>> {
    if input.is_file() {
        let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(input.to_path_buf(), id)]);
    }
    if !input.is_dir() {
        return Err(Error::Io {
            path: input.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        });
    }
    Ok(list_images(input)?.into_iter().map(|p| {
        let id = image_id(input, &p);
        (p, id)
    }).collect())
}

fn out_path(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{id}.{ext}"))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    store::atomic_write(path, serde_json::to_string_pretty(v)?.as_bytes())
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    writeln!(std::io::stdout().lock(), "{text}").map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn read_cipher(p: &Path) -> Result<CipherJpeg> {
    Ok(CipherJpeg::from_bytes(store::read_file(p)?))
}

fn extract_dir(dir: &Path) -> Result<Vec<FeatureSet>> {
    inputs(dir)?
        .par_iter()
        .map(|(p, id)| extract(&read_cipher(p)?, id.as_str()))
        .collect()
}

fn load_manifest(p: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })?;
    DatasetManifest::from_json(&text)
}

fn select(features: Vec<FeatureSet>, manifest: &DatasetManifest, split: Split) -> Result<Vec<(FeatureSet, String)>> {
    let by_id: HashMap<&str, (&str, Split)> =
        manifest.entries.iter().map(|e| (e.id.as_str(), (e.label.as_str(), e.split))).collect();
    let mut out = Vec::new();
    for fs in features {
        let (label, s) = by_id
            .get(fs.image_id.as_str())
            .ok_or_else(|| Error::Mismatch(format!("image {} is not in the manifest", fs.image_id)))?;
        if *s == split {
            let label = label.to_string();
            out.push((fs, label));
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid("no images of the requested split in the feature file".into()));
    }
    Ok(out)
}

/// Model config with `n_blocks` taken from the data.
fn fit_blocks(cfg: &mut RunConfig, data: &[FeatureSet]) -> Result<()> {
    let n = data.first().map(|f| f.blocks.len()).ok_or_else(|| Error::Invalid("no training images".into()))?;
    if cfg.model.n_blocks != n {
        log::info!("setting model.n_blocks = {n} from the data");
        cfg.model.n_blocks = n;
    }
    Ok(())
}

struct CsvLog {
    w: Option<csv::Writer<fs::File>>,
    start: Instant,
}

impl CsvLog {
    fn new(path: Option<&Path>) -> Result<Self> {
        let w = match path {
            Some(p) => {
                let mut w = csv::Writer::from_path(p).map_err(|e| csv_err(p, e))?;
                w.write_record(["epoch", "loss", "lr", "seconds"]).map_err(|e| csv_err(p, e))?;
                Some(w)
            }
            None => None,
        };
        Ok(CsvLog { w, start: Instant::now() })
    }

    fn record(&mut self, s: &EpochStats) -> Result<()> {
        if let Some(w) = &mut self.w {
            let secs = self.start.elapsed().as_secs_f64();
            w.write_record([s.epoch.to_string(), s.loss.to_string(), s.lr.to_string(), format!("{secs:.3}")])
                .and_then(|_| w.flush().map_err(Into::into))
                .map_err(|e| csv_err(Path::new("training log"), e))?;
        }
        Ok(())
    }
}

fn csv_err(p: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: p.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn save_checkpoint(params: &ModelParams<f32>, head: Option<&ArcFaceHead<f32>>, path: &Path) -> Result<[u8; 32]> {
    let bytes = store::write_checkpoint(params, head)?;
    store::atomic_write(path, &bytes)?;
    Ok(store::fingerprint(&bytes))
}

fn save_outcome(out: &TrainOutcome, path: &Path) -> Result<()> {
    let fp = save_checkpoint(&out.params, out.head.as_ref(), path)?;
    log::info!("wrote {} (fingerprint {})", path.display(), hex::encode(fp));
    Ok(())
}

/// Per-epoch observer: log a CSV row and overwrite the checkpoint so an
/// interrupted run keeps its last completed epoch.
fn epoch_observer<'a>(
    csv: &'a mut CsvLog,
    output: &'a Path,
) -> impl FnMut(&EpochStats, &ModelParams<f32>, Option<&ArcFaceHead<f32>>) -> Result<()> + 'a {
    move |s, p, h| {
        csv.record(s)?;
        save_checkpoint(p, h, output)?;
        log::debug!("epoch {} loss {:.4}", s.epoch, s.loss);
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::Encrypt { input, output, keys, key } => {
            let master = MasterSecret::from_hex(&key.master_key)?;
            let enc = JpegEncoder::new(cfg.quality)?;
            let items = inputs(&input)?;
            items.par_iter().try_for_each(|(p, id)| -> Result<()> {
                let img = RgbImage::open(p)?;
                let (cipher, ks) = encrypt_adaptive(&img, &master, &enc)?;
                store::atomic_write(&out_path(&output, id, "jpg"), cipher.as_bytes())?;
                write_json(&out_path(&keys, id, "json"), &ks)
            })?;
            log::info!("encrypted {} images into {}", items.len(), output.display());
        }
        Cmd::Decrypt { input, keys, output, png } => {
            let items = inputs(&input)?;
            items.par_iter().try_for_each(|(p, id)| -> Result<()> {
                let kp = out_path(&keys, id, "json");
                let ks: KeySet = serde_json::from_slice(&store::read_file(&kp)?)?;
                let cipher = read_cipher(p)?;
                if png {
                    decrypt_image(&cipher, &ks)?.save(&out_path(&output, id, "png"))?;
                    Ok(())
                } else {
                    store::atomic_write(&out_path(&output, id, "jpg"), &decrypt_to_jpeg(&cipher, &ks)?)
                }
            })?;
            log::info!("decrypted {} images into {}", items.len(), output.display());
        }
        Cmd::Extract { input, output } => {
            let sets = extract_dir(&input)?;
            store::atomic_write(&output, &store::write_features(&sets)?)?;
            log::info!("extracted {} feature sets", sets.len());
        }
        Cmd::Split { input, output, mode, fraction } => {
            let m = store::build_manifest(&input, mode, fraction, cli.seed.unwrap_or(0))?;
            store::atomic_write(&output, m.to_json()?.as_bytes())?;
            log::info!(
                "{} train / {} test images",
                m.split(Split::Train).count(),
                m.split(Split::Test).count()
            );
        }
        Cmd::TrainUnsup { features, manifest, output, log, epochs } => {
            let mut cfg = cfg;
            let mut data = store::read_features(&store::read_file(&features)?)?;
            if let Some(m) = manifest {
                data = select(data, &load_manifest(&m)?, Split::Train)?.into_iter().map(|(f, _)| f).collect();
            }
            fit_blocks(&mut cfg, &data)?;
            if let Some(e) = epochs {
                cfg.train.total_epochs = e;
                cfg.train.warmup_epochs = cfg.train.warmup_epochs.min(e);
            }
            let init = training::new_model(&cfg.model, &data, cfg.train.seed)?;
            let mut csv = CsvLog::new(log.as_deref())?;
            let out = training::train_unsupervised(&data, init, &cfg.train, &cfg.augment, &mut epoch_observer(&mut csv, &output))?;
            save_outcome(&out, &output)?;
        }
        Cmd::TrainSup { features, manifest, init, output, log, epochs } => {
            let mut cfg = cfg;
            let ck = store::read_checkpoint(&store::read_file(&init)?)?;
            let labeled = select(store::read_features(&store::read_file(&features)?)?, &load_manifest(&manifest)?, Split::Train)?;
            let mut classes: Vec<&str> = labeled.iter().map(|(_, l)| l.as_str()).collect();
            classes.sort();
            classes.dedup();
            let labels: Vec<usize> = labeled
                .iter()
                .map(|(_, l)| classes.binary_search(&l.as_str()).expect("label listed"))
                .collect();
            let n_classes = classes.len();
            let data: Vec<FeatureSet> = labeled.into_iter().map(|(f, _)| f).collect();
            if let Some(e) = epochs {
                cfg.finetune.total_epochs = e;
                cfg.finetune.warmup_epochs = cfg.finetune.warmup_epochs.min(e);
            }
            let mut csv = CsvLog::new(log.as_deref())?;
            let out = training::fine_tune_supervised(
                &data,
                &labels,
                n_classes,
                ck.params,
                &cfg.finetune,
                &cfg.augment,
                &mut epoch_observer(&mut csv, &output),
            )?;
            save_outcome(&out, &output)?;
        }
        Cmd::Index { ciphers, features, checkpoint, output } => {
            let bytes = store::read_file(&checkpoint)?;
            let ck = store::read_checkpoint(&bytes)?;
            let sets = match (ciphers, features) {
                (Some(dir), _) => extract_dir(&dir)?,
                (None, Some(f)) => store::read_features(&store::read_file(&f)?)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            let ix = store::build_index(&sets, &ck.params, store::fingerprint(&bytes))?;
            store::atomic_write(&output, &ix.to_bytes()?)?;
            log::info!("indexed {} images", ix.len());
        }
        Cmd::Search { query, index, checkpoint, k } => {
            let bytes = store::read_file(&checkpoint)?;
            let ck = store::read_checkpoint(&bytes)?;
            let ix = RetrievalIndex::from_bytes(&store::read_file(&index)?)?;
            let id = query.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let out = store::search(&read_cipher(&query)?, &id, &ix, &ck.params, &store::fingerprint(&bytes), k)?;
            print_json(&out)?;
        }
        Cmd::EvalMap { index, manifest, k, split, rq, csv } => {
            let ix = RetrievalIndex::from_bytes(&store::read_file(&index)?)?;
            let m = load_manifest(&manifest)?;
            let by_id: HashMap<&str, (&str, Split)> =
                m.entries.iter().map(|e| (e.id.as_str(), (e.label.as_str(), e.split))).collect();
            let (mut ids, mut labels, mut vectors) = (Vec::new(), Vec::new(), Vec::new());
            for (i, id) in ix.ids().iter().enumerate() {
                let (label, s) = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::Mismatch(format!("indexed image {id} is not in the manifest")))?;
                let keep = match split {
                    SplitArg::All => true,
                    SplitArg::Train => *s == Split::Train,
                    SplitArg::Test => *s == Split::Test,
                };
                if keep {
                    ids.push(id.clone());
                    labels.push(label.to_string());
                    vectors.extend_from_slice(ix.vector(i));
                }
            }
            let report = eval::evaluate_map(&ids, &vectors, &labels, k, rq.into())?;
            if let Some(p) = csv {
                let mut w = csv::Writer::from_path(&p).map_err(|e| csv_err(&p, e))?;
                w.write_record(["query_id", "ap"]).map_err(|e| csv_err(&p, e))?;
                for (q, ap) in &report.per_query {
                    w.write_record([q.as_str(), &ap.to_string()]).map_err(|e| csv_err(&p, e))?;
                }
                w.flush().map_err(|e| Error::Io { path: p.clone(), source: e })?;
            }
            print_json(&serde_json::json!({
                "k": report.k,
                "map": report.map,
                "queries": report.per_query.len(),
                "skipped": report.skipped,
            }))?;
        }
        Cmd::EvalCrypto { plain, cipher, trials, master_key, output } => {
            let plains = inputs(&plain)?;
            let ciphers: HashMap<String, PathBuf> = inputs(&cipher)?.into_iter().map(|(p, id)| (id, p)).collect();
            let stats = plains
                .par_iter()
                .map(|(p, id)| {
                    let cp = ciphers
                        .get(id)
                        .ok_or_else(|| Error::Mismatch(format!("no cipher image for {id}")))?;
                    image_crypto_stats(id, &RgbImage::open(p)?, &decompress(&store::read_file(cp)?)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut diffs = Vec::new();
            if trials > 0 && plains.is_empty() {
                return Err(Error::Invalid("no plain images for differential trials".into()));
            }
            if trials > 0 {
                let key = master_key.ok_or_else(|| Error::Invalid("differential trials need --master-key".into()))?;
                let master = MasterSecret::from_hex(&key)?;
                let enc = JpegEncoder::new(cfg.quality)?;
                let seed = cli.seed.unwrap_or(0);
                diffs = (0..trials)
                    .into_par_iter()
                    .map(|t| {
                        let mut rng = ChaCha8Rng::seed_from_u64(training::mix_seed(seed, &[0xd1ff, t as u64]));
                        let img = RgbImage::open(&plains[t % plains.len()].0)?;
                        differential_attack_trial(&img, &master, &enc, true, &mut rng)
                    })
                    .collect::<Result<_>>()?;
            }
            let report = crypto_report(stats, &diffs);
            match output {
                Some(p) => write_json(&p, &report)?,
                None => print_json(&report)?,
            }
        }
        Cmd::Synth { output, per_class, size } => {
            let paths = synth::write_texture_corpus(&output, per_class, size, cli.seed.unwrap_or(0))?;
            log::info!("wrote {} images", paths.len());
        }
    }
    Ok(())
}
