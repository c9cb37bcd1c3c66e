use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

const IMAGE_EXTS: &[&str] = &["jpg", "jpeg", "png", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Train and test classes are disjoint.
    OpenSet,
    /// Every class is split between train and test.
    ClosedSet,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "open_set" | "open" => Ok(SplitMode::OpenSet),
            "closed_set" | "closed" => Ok(SplitMode::ClosedSet),
            _ => Err(Error::invalid(format!("unknown split mode {s:?} (expected open_set or closed_set)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative path without extension, `/`-separated.
    pub id: String,
    /// Relative path including extension.
    pub path: String,
    pub label: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split_mode: SplitMode,
    /// Fraction of classes (open set) or of each class's images (closed set) used for training.
    pub train_fraction: f64,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn classes(&self) -> Vec<String> {
        let mut c: Vec<String> = self.entries.iter().map(|e| e.label.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn label_of(&self) -> HashMap<&str, &str> {
        self.entries.iter().map(|e| (e.id.as_str(), e.label.as_str())).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(s)?;
        m.check()?;
        Ok(m)
    }

    /// Enforce the split-mode invariant.
    pub fn check(&self) -> Result<()> {
        let mut per_class: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for e in &self.entries {
            let c = per_class.entry(&e.label).or_default();
            match e.split {
                Split::Train => c.0 += 1,
                Split::Test => c.1 += 1,
            }
        }
        for (label, (tr, te)) in per_class {
            let ok = match self.split_mode {
                SplitMode::OpenSet => tr == 0 || te == 0,
                SplitMode::ClosedSet => tr > 0 && te > 0,
            };
            if !ok {
                return Err(Error::Invalid(format!(
                    "class {label} has {tr} train and {te} test images, violating the {:?} split",
                    self.split_mode
                )));
            }
        }
        Ok(())
    }
}

/// Relative id for `path` under `root`: extension stripped, `/` separators.
pub fn image_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// All image files under `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in WalkDir::new(dir).follow_links(true) {
        let e = e.map_err(|err| {
            let p = err.path().unwrap_or(dir).to_path_buf();
            Error::io(&p, err.into())
        })?;
        let is_img = e
            .path()
            .extension()
            .and_then(|x| x.to_str())
            .is_some_and(|x| IMAGE_EXTS.contains(&x.to_ascii_lowercase().as_str()));
        if e.file_type().is_file() && is_img {
            out.push(e.into_path());
        }
    }
    out.sort();
    Ok(out)
}

/// Scan `image_dir/<class>/<image>` and split deterministically.
pub fn build_manifest(image_dir: &Path, mode: SplitMode, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    let mut items = Vec::new();
    for p in list_images(image_dir)? {
        let rel = p.strip_prefix(image_dir).unwrap_or(&p);
        let label = match rel.parent().and_then(|d| d.components().next()) {
            Some(c) => c.as_os_str().to_string_lossy().into_owned(),
            None => {
                return Err(Error::Invalid(format!(
                    "{} is not inside a class subfolder",
                    p.display()
                )))
            }
        };
        let path = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        items.push((image_id(image_dir, &p), path, label));
    }
    split_items(items, mode, train_fraction, seed)
}

/// Split `(id, path, label)` triples.
pub fn split_items(
    items: Vec<(String, String, String)>,
    mode: SplitMode,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Invalid(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut by_class: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    for (id, path, label) in items {
        if !seen.insert(id.clone()) {
            return Err(Error::Invalid(format!("duplicate image id {id}")));
        }
        by_class.entry(label).or_default().push((id, path));
    }
    if by_class.is_empty() {
        return Err(Error::invalid("no images found"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    match mode {
        SplitMode::ClosedSet => {
            for (label, mut imgs) in by_class {
                if imgs.len() < 2 {
                    return Err(Error::Invalid(format!(
                        "class {label} has {} image(s); a closed-set split needs at least 2",
                        imgs.len()
                    )));
                }
                imgs.sort();
                imgs.shuffle(&mut rng);
                let n_train = ((imgs.len() as f64 * train_fraction).round() as usize).clamp(1, imgs.len() - 1);
                for (i, (id, path)) in imgs.into_iter().enumerate() {
                    let split = if i < n_train { Split::Train } else { Split::Test };
                    entries.push(ManifestEntry {
                        id,
                        path,
                        label: label.clone(),
                        split,
                    });
                }
            }
        }
        SplitMode::OpenSet => {
            if by_class.len() < 2 {
                return Err(Error::invalid("an open-set split needs at least 2 classes"));
            }
            let mut classes: Vec<String> = by_class.keys().cloned().collect();
            classes.shuffle(&mut rng);
            let n_train = ((classes.len() as f64 * train_fraction).round() as usize).clamp(1, classes.len() - 1);
            let train: std::collections::HashSet<String> = classes.into_iter().take(n_train).collect();
            for (label, imgs) in by_class {
                let split = if train.contains(&label) { Split::Train } else { Split::Test };
                for (id, path) in imgs {
                    entries.push(ManifestEntry {
                        id,
                        path,
                        label: label.clone(),
                        split,
                    });
                }
            }
        }
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let m = DatasetManifest {
        split_mode: mode,
        train_fraction,
        seed,
        entries,
    };
    m.check()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn corpus(classes: usize, per: usize) -> Vec<(String, String, String)> {
        (0..classes)
            .flat_map(|c| {
                (0..per).map(move |i| {
                    let id = format!("c{c:03}/{i:03}");
                    (id.clone(), format!("{id}.jpg"), format!("c{c:03}"))
                })
            })
            .collect()
    }

    #[test]
    fn closed_set_counts() {
        let m = split_items(corpus(100, 100), SplitMode::ClosedSet, 0.7, 1).unwrap();
        assert_eq!(m.split(Split::Train).count(), 7000);
        assert_eq!(m.split(Split::Test).count(), 3000);
    }

    #[test]
    fn open_set_disjoint() {
        let m = split_items(corpus(100, 5), SplitMode::OpenSet, 0.7, 1).unwrap();
        let tr: HashSet<_> = m.split(Split::Train).map(|e| &e.label).collect();
        let te: HashSet<_> = m.split(Split::Test).map(|e| &e.label).collect();
        assert_eq!(tr.len(), 70);
        assert_eq!(te.len(), 30);
        assert!(tr.is_disjoint(&te));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = split_items(corpus(5, 10), SplitMode::ClosedSet, 0.7, 9).unwrap();
        let b = split_items(corpus(5, 10), SplitMode::ClosedSet, 0.7, 9).unwrap();
        let c = split_items(corpus(5, 10), SplitMode::ClosedSet, 0.7, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(DatasetManifest::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn tiny_class_rejected() {
        let mut items = corpus(2, 3);
        items.push(("solo/0".into(), "solo/0.jpg".into(), "solo".into()));
        assert!(split_items(items.clone(), SplitMode::ClosedSet, 0.7, 0).is_err());
        assert!(split_items(items, SplitMode::OpenSet, 0.7, 0).is_ok());
    }

    #[test]
    fn scans_directory() {
        let dir = tempfile::tempdir().unwrap();
        for c in ["a", "b"] {
            std::fs::create_dir_all(dir.path().join(c)).unwrap();
            for i in 0..3 {
                std::fs::write(dir.path().join(format!("{c}/{i}.png")), b"").unwrap();
            }
        }
        std::fs::write(dir.path().join("a/notes.txt"), b"").unwrap();
        let m = build_manifest(dir.path(), SplitMode::ClosedSet, 0.5, 0).unwrap();
        assert_eq!(m.entries.len(), 6);
        assert_eq!(m.entries[0].id, "a/0");
        assert_eq!(m.entries[0].path, "a/0.png");
    }
}
