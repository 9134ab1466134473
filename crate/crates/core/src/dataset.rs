//! Dataset assembly: raw series to fused (series, spectrogram-variant)
//! training samples, plus synthetic stand-in datasets.
//!
//! Splitting happens before augmentation, and only the training split is
//! augmented. Each training series is repeated once per image variant so
//! that every fused sample pairs a series with an image derived from that
//! same series.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{random_erase, variant_seed, AugmentPlan, EraseConfig};
use crate::error::{invalid, io_err, Error, Result};
use crate::rng::{derive_seed, string_id, Stream};
use crate::signal::{series_to_images, GrayImage, StftConfig, TimeSeries};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `<class>/<file stem>` of the raw series.
    pub source_id: String,
    /// 0 for the original spectrogram, `1 + i` for the erase with ratio `i`
    /// (shifted down by one when originals are dropped).
    pub variant_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedSample {
    pub series: Arc<TimeSeries>,
    /// One spectrogram image per series channel.
    pub images: Vec<GrayImage>,
    pub label: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Random,
    Sequential,
}

/// How many series go to training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Random mode takes `round(f * n)` of the pooled, shuffled samples;
    /// sequential mode takes the first `floor(f * n_c)` of every class.
    TrainFraction(f64),
    /// The first (sequential) or a random (random) `n` series of every class.
    TrainPerClass(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Class directory names in label order; empty means every
    /// subdirectory, sorted by name.
    #[serde(default)]
    pub class_names: Vec<String>,
    pub split: Split,
    #[serde(default)]
    pub split_mode: SplitMode,
    #[serde(default)]
    pub split_seed: u64,
    pub stft: StftConfig,
    #[serde(default)]
    pub augment: AugmentPlan,
    #[serde(default)]
    pub augment_seed: u64,
    /// Class scored as positive for the two-class F1.
    #[serde(default)]
    pub positive_class: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub class_names: Vec<String>,
    pub positive_class: Option<usize>,
    pub train: Vec<FusedSample>,
    pub test: Vec<FusedSample>,
}

struct RawSample {
    source_id: String,
    label: usize,
    series: Arc<TimeSeries>,
}

fn list_dirs(root: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == ext) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn load_raw(root: &Path, class_names: &[String]) -> Result<Vec<RawSample>> {
    let mut samples = Vec::new();
    let mut channels = None;
    for (label, class) in class_names.iter().enumerate() {
        let dir = root.join(class);
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir));
        }
        let files = list_files(&dir, "csv")?;
        if files.is_empty() {
            return Err(Error::Dataset(format!("class directory {} has no CSV series", dir.display())));
        }
        for path in files {
            let ts = TimeSeries::read_csv(&path)?.with_label(label);
            match channels {
                None => channels = Some(ts.num_channels()),
                Some(c) if c != ts.num_channels() => {
                    return Err(Error::Dataset(format!(
                        "{} has {} channels, earlier series have {c}",
                        path.display(),
                        ts.num_channels()
                    )))
                }
                _ => {}
            }
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            samples.push(RawSample {
                source_id: format!("{class}/{stem}"),
                label,
                series: Arc::new(ts),
            });
        }
    }
    Ok(samples)
}

/// Indices of training samples; the rest are test samples.
fn split_indices(samples: &[RawSample], num_classes: usize, spec: &DatasetSpec) -> Result<HashSet<usize>> {
    let mut rng = Stream::new(spec.split_seed);
    let by_class: Vec<Vec<usize>> = (0..num_classes)
        .map(|c| (0..samples.len()).filter(|&i| samples[i].label == c).collect())
        .collect();
    let mut train = HashSet::new();
    match (spec.split, spec.split_mode) {
        (Split::TrainFraction(f), _) if !(0.0..=1.0).contains(&f) => {
            return Err(invalid(format!("train fraction {f} outside [0, 1]")));
        }
        (Split::TrainFraction(f), SplitMode::Random) => {
            let mut all: Vec<usize> = (0..samples.len()).collect();
            rng.shuffle(&mut all);
            let n = (f * samples.len() as f64).round() as usize;
            train.extend(all.into_iter().take(n));
        }
        (Split::TrainFraction(f), SplitMode::Sequential) => {
            for idx in &by_class {
                let n = (f * idx.len() as f64 + 1e-9).floor() as usize;
                train.extend(idx.iter().take(n));
            }
        }
        (Split::TrainPerClass(n), mode) => {
            for idx in &by_class {
                if idx.len() < n {
                    return Err(Error::Dataset(format!(
                        "{} training series per class requested, a class has only {}",
                        n,
                        idx.len()
                    )));
                }
                let mut idx = idx.clone();
                if mode == SplitMode::Random {
                    rng.shuffle(&mut idx);
                }
                train.extend(idx.into_iter().take(n));
            }
        }
    }
    Ok(train)
}

/// Erased variants of one sample's channel images, original first when kept.
pub fn sample_variants(
    images: &[GrayImage],
    source_id: &str,
    plan: &AugmentPlan,
    master_seed: u64,
) -> Result<Vec<Vec<GrayImage>>> {
    let mut variants = Vec::with_capacity(plan.variants_per_image());
    if plan.keep_original {
        variants.push(images.to_vec());
    }
    for (ri, &ratio) in plan.ratios.iter().enumerate() {
        let erased = images
            .iter()
            .enumerate()
            .map(|(ch, img)| {
                let key = derive_seed(&[string_id(source_id), ch as u64]);
                random_erase(img, &EraseConfig::new(ratio, variant_seed(master_seed, key, ri)))
            })
            .collect::<Result<Vec<_>>>()?;
        variants.push(erased);
    }
    Ok(variants)
}

/// Loads `<raw_dir>/<class>/<id>.csv`, splits, transforms and augments.
pub fn build_dataset(raw_dir: &Path, spec: &DatasetSpec) -> Result<BuiltDataset> {
    spec.stft.validate()?;
    spec.augment.validate()?;
    let class_names = if spec.class_names.is_empty() {
        list_dirs(raw_dir)?
    } else {
        spec.class_names.clone()
    };
    if class_names.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least two classes under {}",
            raw_dir.display()
        )));
    }
    let positive_class = match &spec.positive_class {
        None => None,
        Some(name) => Some(
            class_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| invalid(format!("positive class {name} is not a class")))?,
        ),
    };
    let raw = load_raw(raw_dir, &class_names)?;
    let train_idx = split_indices(&raw, class_names.len(), spec)?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, s) in raw.iter().enumerate() {
        let images = series_to_images(&s.series, &spec.stft)?;
        if train_idx.contains(&i) {
            let variants = sample_variants(&images, &s.source_id, &spec.augment, spec.augment_seed)?;
            for (v, imgs) in variants.into_iter().enumerate() {
                train.push(FusedSample {
                    series: Arc::clone(&s.series),
                    images: imgs,
                    label: s.label,
                    provenance: Provenance {
                        source_id: s.source_id.clone(),
                        variant_index: v,
                    },
                });
            }
        } else {
            test.push(FusedSample {
                series: Arc::clone(&s.series),
                images,
                label: s.label,
                provenance: Provenance {
                    source_id: s.source_id.clone(),
                    variant_index: 0,
                },
            });
        }
    }
    Ok(BuiltDataset {
        class_names,
        positive_class,
        train,
        test,
    })
}

/// SHA-256 of a series' canonical bytes: channel count and length as
/// little-endian u64, then every value as little-endian f64, channel-major.
pub fn series_hash(ts: &TimeSeries) -> String {
    let mut h = Sha256::new();
    h.update((ts.num_channels() as u64).to_le_bytes());
    h.update((ts.len() as u64).to_le_bytes());
    for ch in ts.channels() {
        for v in ch {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Content hash of a sample list (labels, series and images, in order).
pub fn fingerprint(samples: &[FusedSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update((s.label as u64).to_le_bytes());
        h.update(series_hash(&s.series).as_bytes());
        for img in &s.images {
            h.update(img.to_pgm());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: usize,
    pub series_path: String,
    pub image_paths: Vec<String>,
    pub variant_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub classes: Vec<String>,
    #[serde(default)]
    pub positive_class: Option<usize>,
    pub samples: Vec<ManifestEntry>,
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `manifest.json`, `series/*.csv` (one per source series) and
/// `images/*.pgm`.
pub fn save_dataset(
    dir: &Path,
    classes: &[String],
    positive_class: Option<usize>,
    samples: &[FusedSample],
) -> Result<()> {
    let series_dir = dir.join("series");
    let image_dir = dir.join("images");
    fs::create_dir_all(&series_dir).map_err(io_err(&series_dir))?;
    fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;
    let mut written = HashSet::new();
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let stem = file_safe(&s.provenance.source_id);
        let series_path = format!("series/{stem}.csv");
        if written.insert(series_path.clone()) {
            s.series.write_csv(&dir.join(&series_path))?;
        }
        let mut image_paths = Vec::new();
        for (ch, img) in s.images.iter().enumerate() {
            let p = format!("images/{stem}_v{}_ch{ch}.pgm", s.provenance.variant_index);
            img.write_pgm(&dir.join(&p))?;
            image_paths.push(p);
        }
        entries.push(ManifestEntry {
            id: format!("{}#v{}", s.provenance.source_id, s.provenance.variant_index),
            label: s.label,
            series_path,
            image_paths,
            variant_index: s.provenance.variant_index,
        });
    }
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        classes: classes.to_vec(),
        positive_class,
        samples: entries,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(io_err(&path))
}

pub struct LoadedDataset {
    pub classes: Vec<String>,
    pub positive_class: Option<usize>,
    pub samples: Vec<FusedSample>,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let mut cache: BTreeMap<String, Arc<TimeSeries>> = BTreeMap::new();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        if e.label >= manifest.classes.len() {
            return Err(Error::Malformed {
                path: path.clone(),
                reason: format!("sample {} has label {} outside the class list", e.id, e.label),
            });
        }
        let series = match cache.get(&e.series_path) {
            Some(s) => Arc::clone(s),
            None => {
                let s = Arc::new(TimeSeries::read_csv(&dir.join(&e.series_path))?.with_label(e.label));
                cache.insert(e.series_path.clone(), Arc::clone(&s));
                s
            }
        };
        let images = e
            .image_paths
            .iter()
            .map(|p| GrayImage::read_pgm(&dir.join(p)))
            .collect::<Result<Vec<_>>>()?;
        if images.len() != series.num_channels() {
            return Err(Error::Malformed {
                path: path.clone(),
                reason: format!("sample {} has {} images for {} channels", e.id, images.len(), series.num_channels()),
            });
        }
        let source_id = e.id.rsplit_once('#').map_or(e.id.as_str(), |(s, _)| s).to_string();
        samples.push(FusedSample {
            series,
            images,
            label: e.label,
            provenance: Provenance {
                source_id,
                variant_index: e.variant_index,
            },
        });
    }
    Ok(LoadedDataset {
        classes: manifest.classes,
        positive_class: manifest.positive_class,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Two classes, one channel.
    UnivariateBinary,
    /// Four classes, nine channels (three 3-axis sensors).
    Multivariate4Class,
}

fn default_noise() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub samples_per_class: usize,
    pub length: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticKind {
    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            SyntheticKind::UnivariateBinary => &["steady", "modulated"],
            SyntheticKind::Multivariate4Class => &["normal", "shifted", "burst", "wobble"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// Univariate recipes. Class 0: a tone in cycles/sample band [0.035, 0.075).
/// Class 1: a tone in [0.065, 0.105) under a 35-85% deep amplitude envelope
/// with 2-6 cycles per record. Both get random phase, amplitude in
/// [0.6, 1.4) and white Gaussian noise.
fn univariate(class: usize, len: usize, sigma: f64, rng: &mut Stream) -> Vec<Vec<f64>> {
    let amp = rng.uniform(0.6, 1.4);
    let phase = rng.uniform(0.0, TAU);
    let (f, depth, env_cycles) = if class == 0 {
        (rng.uniform(0.035, 0.075), 0.0, 0.0)
    } else {
        (rng.uniform(0.065, 0.105), rng.uniform(0.35, 0.85), rng.uniform(2.0, 6.0))
    };
    let env_phase = rng.uniform(0.0, TAU);
    let x = (0..len)
        .map(|n| {
            let t = n as f64;
            let env = 1.0 + depth * (TAU * env_cycles * t / len as f64 + env_phase).sin();
            amp * env * (TAU * f * t + phase).sin() + sigma * rng.normal()
        })
        .collect();
    vec![x]
}

/// Nine channels with base tones `0.03 + 0.012 c`. Class 1 raises the
/// first sensor's tones by 40%, class 2 adds decaying high-frequency bursts
/// to the second sensor, class 3 amplitude-modulates the third sensor.
fn multivariate(class: usize, len: usize, sigma: f64, rng: &mut Stream) -> Vec<Vec<f64>> {
    let bursts: Vec<usize> = (0..3).map(|_| rng.below(len)).collect();
    (0..9)
        .map(|c| {
            let sensor = c / 3;
            let mut f = 0.03 + 0.012 * c as f64 * rng.uniform(0.95, 1.05);
            if class == 1 && sensor == 0 {
                f *= 1.4;
            }
            let amp = rng.uniform(0.7, 1.3);
            let phase = rng.uniform(0.0, TAU);
            let wobble = rng.uniform(3.0, 6.0);
            (0..len)
                .map(|n| {
                    let t = n as f64;
                    let mut env = 1.0;
                    if class == 3 && sensor == 2 {
                        env += 0.7 * (TAU * wobble * t / len as f64).sin();
                    }
                    let mut v = amp * env * (TAU * f * t + phase).sin();
                    if class == 2 && sensor == 1 {
                        for &b in &bursts {
                            if n >= b {
                                let d = (n - b) as f64;
                                v += 2.0 * (-d / 12.0).exp() * (TAU * 0.3 * d).sin();
                            }
                        }
                    }
                    v + sigma * rng.normal()
                })
                .collect()
        })
        .collect()
}

/// Generates one series in memory.
pub fn synthesize_series(spec: &SyntheticSpec, class: usize, index: usize) -> Result<TimeSeries> {
    let mut rng = Stream::new(derive_seed(&[spec.seed, class as u64, index as u64]));
    let channels = match spec.kind {
        SyntheticKind::UnivariateBinary => univariate(class, spec.length, spec.noise_sigma, &mut rng),
        SyntheticKind::Multivariate4Class => multivariate(class, spec.length, spec.noise_sigma, &mut rng),
    };
    Ok(TimeSeries::new(channels)?.with_label(class))
}

/// Writes `<out>/<class>/<class>_<index>.csv` for every class and sample.
pub fn synthesize(spec: &SyntheticSpec, out: &Path) -> Result<Vec<PathBuf>> {
    if spec.length == 0 || spec.samples_per_class == 0 {
        return Err(invalid("synthetic length and samples_per_class must be positive"));
    }
    if spec.noise_sigma.is_nan() || spec.noise_sigma < 0.0 {
        return Err(invalid("noise_sigma must be non-negative"));
    }
    let mut written = Vec::new();
    for (class, name) in spec.kind.class_names().iter().enumerate() {
        let dir = out.join(name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for i in 0..spec.samples_per_class {
            let path = dir.join(format!("{name}_{i:04}.csv"));
            synthesize_series(spec, class, i)?.write_csv(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}
