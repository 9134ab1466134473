use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use ssnn::augment::{random_erase, variant_seed, EraseConfig};
use ssnn::dataset::{build_dataset, fingerprint, load_dataset, save_dataset, synthesize, DatasetSpec, SyntheticSpec};
use ssnn::evaluation::{confusion, render_svg, EvalReport};
use ssnn::network::{build_ssnn, predict as argmax, Modality, SsnnConfig};
use ssnn::rng::string_id;
use ssnn::signal::{series_to_images, GrayImage, StftConfig, TimeSeries, WindowKind};
use ssnn::training::{self, load_checkpoint, save_checkpoint, RunMetadata, TrainConfig};

use crate::manifest::{fresh_dir, fresh_file, walk, Recorder, MANIFEST_NAME};
use crate::OutArgs;

#[derive(Clone, Copy, ValueEnum)]
pub enum WindowArg {
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModalityArg {
    Fusion,
    Series,
    Image,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Fusion => Modality::Fusion,
            ModalityArg::Series => Modality::SeriesOnly,
            ModalityArg::Image => Modality::ImageOnly,
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(spec_path: &Path, seed: Option<u64>, out: &OutArgs) -> Result<()> {
    let mut rec = Recorder::start("synth");
    rec.input(spec_path)?;
    let mut spec: SyntheticSpec = read_json(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    fresh_dir(&out.out, out.force)?;
    let files = synthesize(&spec, &out.out)?;
    println!("wrote {} series to {}", files.len(), out.out.display());
    rec.output(&out.out);
    rec.finish(serde_json::to_value(&spec)?, Some(spec.seed), &out.out.join(MANIFEST_NAME))
}

pub fn stft(input: &Path, window: usize, overlap: f64, kind: WindowArg, out: &OutArgs) -> Result<()> {
    if !(0.0..1.0).contains(&overlap) {
        bail!("--overlap must be a fraction in [0, 1), got {overlap}");
    }
    let kind = match kind {
        WindowArg::Hann => WindowKind::Hann,
        WindowArg::Rectangular => WindowKind::Rectangular,
    };
    let cfg = StftConfig::with_overlap_fraction(window, overlap).window_kind(kind);
    cfg.validate()?;
    let mut rec = Recorder::start("stft");
    rec.input(input)?;
    let series: Vec<_> = walk(input)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    if series.is_empty() {
        bail!("no .csv series under {}", input.display());
    }
    fresh_dir(&out.out, out.force)?;
    let mut written = 0;
    for rel in &series {
        let ts = TimeSeries::read_csv(&input.join(rel))?;
        let images = series_to_images(&ts, &cfg).with_context(|| format!("transforming {}", rel.display()))?;
        let stem = rel.with_extension("");
        for (ch, img) in images.iter().enumerate() {
            let dest = out.out.join(format!("{}_ch{ch}.pgm", stem.display()));
            fs::create_dir_all(dest.parent().unwrap_or(&out.out))?;
            img.write_pgm(&dest)?;
            written += 1;
        }
    }
    println!("wrote {written} spectrogram images to {}", out.out.display());
    rec.output(&out.out);
    rec.finish(serde_json::to_value(cfg)?, None, &out.out.join(MANIFEST_NAME))
}

fn ratio_tag(r: f64) -> String {
    format!("{r}")
}

pub fn augment(input: &Path, ratios: Vec<f64>, seed: u64, max_retries: usize, keep_original: bool, out: &OutArgs) -> Result<()> {
    let plan = ssnn::augment::AugmentPlan { ratios, keep_original };
    plan.validate()?;
    let mut rec = Recorder::start("augment");
    rec.input(input)?;
    let images: Vec<_> = walk(input)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    if images.is_empty() {
        bail!("no .pgm images under {}", input.display());
    }
    fresh_dir(&out.out, out.force)?;
    let mut written = 0;
    for rel in &images {
        let img = GrayImage::read_pgm(&input.join(rel))?;
        let stem = rel.with_extension("");
        let key = string_id(&stem.to_string_lossy());
        let dest_dir = out.out.join(rel.parent().unwrap_or(Path::new("")));
        fs::create_dir_all(&dest_dir)?;
        if plan.keep_original {
            img.write_pgm(&out.out.join(rel))?;
            written += 1;
        }
        for (ri, &ratio) in plan.ratios.iter().enumerate() {
            let vs = variant_seed(seed, key, ri);
            let cfg = EraseConfig {
                max_retries,
                ..EraseConfig::new(ratio, vs)
            };
            let erased = random_erase(&img, &cfg).with_context(|| format!("erasing {}", rel.display()))?;
            erased.write_pgm(&out.out.join(format!("{}_ra{}_s{vs}.pgm", stem.display(), ratio_tag(ratio))))?;
            written += 1;
        }
    }
    println!("wrote {written} images to {}", out.out.display());
    rec.output(&out.out);
    let config = json!({ "ratios": plan.ratios, "keep_original": plan.keep_original, "max_retries": max_retries });
    rec.finish(config, Some(seed), &out.out.join(MANIFEST_NAME))
}

/// Experiment config consumed by `train`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Experiment {
    pub dataset: DatasetSpec,
    /// Network overrides; class and channel counts come from the data.
    #[serde(default)]
    pub model: serde_json::Map<String, Value>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn model_config(overrides: &serde_json::Map<String, Value>, classes: usize, series_ch: usize, image_ch: usize) -> Result<SsnnConfig> {
    let mut obj = overrides.clone();
    for key in ["num_classes", "series_channels", "image_channels"] {
        if obj.contains_key(key) {
            bail!("model.{key} is derived from the data and cannot be set");
        }
    }
    if !obj.contains_key("branch_feature_dim") {
        if let Some(stem) = obj.get("stem_channels").and_then(Value::as_u64) {
            obj.insert("branch_feature_dim".into(), json!(2 * stem));
        }
    }
    obj.insert("num_classes".into(), json!(classes));
    obj.insert("series_channels".into(), json!(series_ch));
    obj.insert("image_channels".into(), json!(image_ch));
    let cfg: SsnnConfig = serde_json::from_value(Value::Object(obj)).context("invalid model section")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(config_path: &Path, data: &Path, seed: Option<u64>, out: &OutArgs) -> Result<()> {
    let mut rec = Recorder::start("train");
    rec.input(config_path)?;
    rec.input(data)?;
    let mut exp: Experiment = read_json(config_path)?;
    if let Some(s) = seed {
        exp.train.seed = s;
        exp.dataset.augment_seed = s;
    }
    exp.train.validate()?;
    let ds = build_dataset(data, &exp.dataset)?;
    let first = ds.train.first().context("the training split is empty")?;
    let cfg = model_config(
        &exp.model,
        ds.class_names.len(),
        first.series.num_channels(),
        first.images.len(),
    )?;
    fresh_dir(&out.out, out.force)?;
    let mut model = build_ssnn(&cfg, exp.train.seed)?;
    let history = training::train(&mut model, &ds.train, &exp.train)?;
    if let Some(last) = history.epochs.last() {
        println!(
            "trained {} epochs on {} samples: loss {:.4}, train accuracy {:.4}",
            last.epoch,
            ds.train.len(),
            last.mean_loss,
            last.train_accuracy
        );
    }

    let ckpt = out.out.join("checkpoint.json");
    save_checkpoint(&model, &ckpt)?;
    let meta = RunMetadata {
        train_config: exp.train.clone(),
        ssnn_config: cfg,
        dataset_fingerprint: fingerprint(&ds.train),
        train_samples: ds.train.len(),
        history,
    };
    let meta_path = out.out.join("run_metadata.json");
    write_json(&meta_path, &meta)?;
    let test_dir = out.out.join("test");
    save_dataset(&test_dir, &ds.class_names, ds.positive_class, &ds.test)?;
    for p in [&ckpt, &meta_path, &test_dir] {
        rec.output(p);
    }
    rec.finish(serde_json::to_value(&exp)?, Some(exp.train.seed), &out.out.join(MANIFEST_NAME))
}

pub fn eval(model_path: &Path, data: &Path, modality: ModalityArg, batch_size: usize, out: &OutArgs) -> Result<()> {
    let mut rec = Recorder::start("eval");
    rec.input(model_path)?;
    rec.input(data)?;
    let model = load_checkpoint(model_path)?;
    let ds = load_dataset(data)?;
    if ds.samples.is_empty() {
        bail!("{} holds no samples", data.display());
    }
    let predicted = training::predict_samples(&model, &ds.samples, modality.into(), batch_size)?;
    let truth: Vec<usize> = ds.samples.iter().map(|s| s.label).collect();
    let cm = confusion(&truth, &predicted, ds.classes.len())?;
    let report = EvalReport::from_confusion(cm, ds.classes, ds.positive_class)?;
    fresh_dir(&out.out, out.force)?;
    let report_path = out.out.join("eval.json");
    write_json(&report_path, &report)?;
    let csv_path = out.out.join("confusion.csv");
    fs::write(&csv_path, report.confusion.to_csv())?;
    println!(
        "accuracy {:.4}, macro F1 {:.4} on {} samples",
        report.accuracy, report.macro_f1, report.num_samples
    );
    rec.output(&report_path);
    rec.output(&csv_path);
    let config = json!({ "modality": Modality::from(modality), "batch_size": batch_size });
    rec.finish(config, None, &out.out.join(MANIFEST_NAME))
}

pub fn predict(model_path: &Path, data: &Path, modality: ModalityArg, batch_size: usize, out: &OutArgs) -> Result<()> {
    let mut rec = Recorder::start("predict");
    rec.input(model_path)?;
    rec.input(data)?;
    let model = load_checkpoint(model_path)?;
    let ds = load_dataset(data)?;
    if ds.samples.is_empty() {
        bail!("{} holds no samples", data.display());
    }
    let logits = training::logits(&model, &ds.samples, modality.into(), batch_size)?;
    let predicted = argmax(&logits)?;
    let classes = ds.classes.len();
    let mut csv = String::from("id,label,predicted");
    for c in &ds.classes {
        write!(csv, ",logit_{c}")?;
    }
    csv.push('\n');
    for (i, s) in ds.samples.iter().enumerate() {
        write!(
            csv,
            "{}#v{},{},{}",
            s.provenance.source_id, s.provenance.variant_index, ds.classes[s.label], ds.classes[predicted[i]]
        )?;
        for v in &logits.data()[i * classes..(i + 1) * classes] {
            write!(csv, ",{v}")?;
        }
        csv.push('\n');
    }
    fresh_dir(&out.out, out.force)?;
    let path = out.out.join("predictions.csv");
    fs::write(&path, csv)?;
    println!("wrote {} predictions to {}", ds.samples.len(), path.display());
    rec.output(&path);
    let config = json!({ "modality": Modality::from(modality), "batch_size": batch_size });
    rec.finish(config, None, &out.out.join(MANIFEST_NAME))
}

pub fn report(eval_path: &Path, out: &OutArgs) -> Result<()> {
    let mut rec = Recorder::start("report");
    rec.input(eval_path)?;
    let report: EvalReport = read_json(eval_path)?;
    let n = report.confusion.num_classes;
    if report.confusion.counts.len() != n || report.confusion.counts.iter().any(|r| r.len() != n) || report.class_names.len() != n {
        bail!("{}: confusion matrix and class names disagree in size", eval_path.display());
    }
    fresh_file(&out.out, out.force)?;
    fs::write(&out.out, render_svg(&report)).with_context(|| format!("writing {}", out.out.display()))?;
    println!("wrote {}", out.out.display());
    rec.output(&out.out);
    rec.finish(json!({}), None, &out.out.with_extension("manifest.json"))
}
