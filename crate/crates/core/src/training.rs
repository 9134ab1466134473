//! Minibatch training with the per-class sigmoid cross-entropy objective,
//! checkpoints and run metadata.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode, Tensor};
use crate::dataset::FusedSample;
use crate::error::{invalid, io_err, Error, Result};
use crate::network::{build_ssnn, predict, Modality, SsnnConfig, SsnnModel};
use crate::rng::{derive_seed, Stream};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Multiplies the learning rate by `factor` every `every_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every_epochs: usize,
    pub factor: f64,
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    16
}
fn default_lr() -> f64 {
    1e-3
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub shuffle: bool,
    #[serde(default)]
    pub modality: Modality,
    #[serde(default)]
    pub lr_decay: Option<StepDecay>,
    /// Stop once eval-mode accuracy on the training set reaches this value.
    /// Checked after every epoch, at the cost of one extra inference pass.
    #[serde(default)]
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            optimizer: Optimizer::default(),
            seed: 0,
            shuffle: true,
            modality: Modality::Fusion,
            lr_decay: None,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(invalid("learning_rate must be a non-negative finite number"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("batch_size and epochs must be at least 1"));
        }
        if let Some(d) = self.lr_decay {
            if d.every_epochs == 0 {
                return Err(invalid("lr_decay.every_epochs must be at least 1"));
            }
        }
        Ok(())
    }
}

/// One-hot targets `[batch, classes]`.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(invalid(format!("label {l} outside {num_classes} classes")));
        }
        data[i * num_classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), num_classes], data)
}

/// Mean over the batch of the per-class sigmoid cross-entropy, summed over
/// classes. Returns the scalar loss value.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let loss = g.bce_with_logits(x, targets)?;
    Ok(g.value(loss).data()[0])
}

/// Model inputs for a batch: series `[b, ch, len]` and images
/// `[b, ch, h, w]` with pixels scaled to `[0, 1]`.
pub fn batch_tensors(samples: &[&FusedSample]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or_else(|| invalid("empty batch"))?;
    let (ch, len) = (first.series.num_channels(), first.series.len());
    let (ich, h, w) = (first.images.len(), first.images[0].height(), first.images[0].width());
    let mut series = Vec::with_capacity(samples.len() * ch * len);
    let mut images = Vec::with_capacity(samples.len() * ich * h * w);
    for s in samples {
        if s.series.num_channels() != ch || s.series.len() != len {
            return Err(invalid(format!(
                "sample {} series is {}x{}, batch expects {ch}x{len}",
                s.provenance.source_id,
                s.series.num_channels(),
                s.series.len()
            )));
        }
        if s.images.len() != ich || s.images.iter().any(|i| i.height() != h || i.width() != w) {
            return Err(invalid(format!(
                "sample {} images do not match the batch shape {ich}x{h}x{w}",
                s.provenance.source_id
            )));
        }
        for c in s.series.channels() {
            series.extend_from_slice(c);
        }
        for img in &s.images {
            images.extend(img.pixels().iter().map(|&p| p as f64 / 255.0));
        }
    }
    Ok((
        Tensor::new(vec![samples.len(), ch, len], series)?,
        Tensor::new(vec![samples.len(), ich, h, w], images)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the training-mode forward passes made during the epoch.
    pub train_accuracy: f64,
    /// Eval-mode accuracy on the training set after the epoch, when early
    /// stopping is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

enum SlotState {
    Adam { m: Vec<f64>, v: Vec<f64> },
    Momentum { velocity: Vec<f64> },
}

struct OptimizerState {
    kind: Optimizer,
    step: u64,
    slots: HashMap<String, SlotState>,
}

impl OptimizerState {
    fn new(kind: Optimizer) -> Self {
        Self {
            kind,
            step: 0,
            slots: HashMap::new(),
        }
    }

    fn apply(&mut self, model: &mut SsnnModel, g: &Graph, grads: &crate::autodiff::Gradients, lr: f64) {
        self.step += 1;
        let step = self.step;
        let kind = self.kind;
        let slots = &mut self.slots;
        model.visit_mut(&mut |name, tensor, trainable| {
            if !trainable {
                return;
            }
            let Some(grad) = g.named(&name).and_then(|v| grads.get(v)) else {
                return;
            };
            let params = tensor.data_mut();
            match kind {
                Optimizer::Adam { beta1, beta2, eps } => {
                    let slot = slots.entry(name).or_insert_with(|| SlotState::Adam {
                        m: vec![0.0; params.len()],
                        v: vec![0.0; params.len()],
                    });
                    let SlotState::Adam { m, v } = slot else { unreachable!() };
                    let c1 = 1.0 - beta1.powi(step as i32);
                    let c2 = 1.0 - beta2.powi(step as i32);
                    for i in 0..params.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                        params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
                Optimizer::SgdMomentum { momentum } => {
                    let slot = slots.entry(name).or_insert_with(|| SlotState::Momentum {
                        velocity: vec![0.0; params.len()],
                    });
                    let SlotState::Momentum { velocity } = slot else { unreachable!() };
                    for i in 0..params.len() {
                        velocity[i] = momentum * velocity[i] + grad[i];
                        params[i] -= lr * velocity[i];
                    }
                }
            }
        });
    }
}

fn inputs_for(g: &mut Graph, modality: Modality, series: Tensor, images: Tensor) -> (Option<crate::autodiff::Var>, Option<crate::autodiff::Var>) {
    let s = (modality != Modality::ImageOnly).then(|| g.constant(series));
    let i = (modality != Modality::SeriesOnly).then(|| g.constant(images));
    (s, i)
}

/// Splits `order` into batches of `size`; a trailing single sample joins the
/// previous batch.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

fn check_shapes(set: &[FusedSample]) -> Result<()> {
    let first = set.first().ok_or_else(|| invalid("training set is empty"))?;
    let key = |s: &FusedSample| {
        (
            s.series.num_channels(),
            s.series.len(),
            s.images.len(),
            s.images.first().map(|i| (i.height(), i.width())),
        )
    };
    let want = key(first);
    if let Some(bad) = set.iter().find(|s| key(s) != want) {
        return Err(invalid(format!(
            "sample {} has shape {:?}, expected {want:?}",
            bad.provenance.source_id,
            key(bad)
        )));
    }
    Ok(())
}

/// Trains in place. Epoch shuffles draw from `derive_seed([seed, 0x5EED, epoch])`.
pub fn train(model: &mut SsnnModel, trainset: &[FusedSample], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    check_shapes(trainset)?;
    let classes = model.config.num_classes;
    if let Some(bad) = trainset.iter().find(|s| s.label >= classes) {
        return Err(invalid(format!("label {} outside {classes} classes", bad.label)));
    }
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut history = TrainHistory::default();
    let mut lr = cfg.learning_rate;
    let mut order: Vec<usize> = (0..trainset.len()).collect();

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            let mut rng = Stream::new(derive_seed(&[cfg.seed, 0x5EED, epoch as u64]));
            rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in batches(&order, cfg.batch_size) {
            let samples: Vec<&FusedSample> = batch.iter().map(|&i| &trainset[i]).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let (series, images) = batch_tensors(&samples)?;
            let targets = one_hot(&labels, classes)?;

            let mut g = Graph::new();
            let (s, i) = inputs_for(&mut g, cfg.modality, series, images);
            let logits = model.run(&mut g, cfg.modality, s, i, Mode::Train)?;
            let loss = g.bce_with_logits(logits, &targets)?;
            let loss_value = g.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Diverged { epoch, loss: loss_value });
            }
            loss_sum += loss_value * batch.len() as f64;
            correct += predict(g.value(logits))?
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            let grads = g.backward(loss)?;
            opt.apply(model, &g, &grads, lr);
        }
        let eval_train_accuracy = match cfg.stop_at_train_accuracy {
            Some(_) => {
                let predicted = predict_samples(model, trainset, cfg.modality, cfg.batch_size)?;
                let hits = predicted.iter().zip(trainset).filter(|(p, s)| **p == s.label).count();
                Some(hits as f64 / trainset.len() as f64)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / trainset.len() as f64,
            train_accuracy: correct as f64 / trainset.len() as f64,
            eval_train_accuracy,
        };
        if !record.mean_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: record.mean_loss,
            });
        }
        let reached = cfg
            .stop_at_train_accuracy
            .zip(record.eval_train_accuracy)
            .is_some_and(|(target, acc)| acc >= target);
        history.epochs.push(record);
        if reached {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
        if let Some(d) = cfg.lr_decay {
            if epoch % d.every_epochs == 0 {
                lr *= d.factor;
            }
        }
    }
    Ok(history)
}

/// Eval-mode logits for `samples`, in order.
pub fn logits(model: &SsnnModel, samples: &[FusedSample], modality: Modality, batch_size: usize) -> Result<Tensor> {
    let classes = model.config.num_classes;
    let mut out = Vec::with_capacity(samples.len() * classes);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&FusedSample> = chunk.iter().collect();
        let (series, images) = batch_tensors(&refs)?;
        let mut g = Graph::new();
        let (s, i) = inputs_for(&mut g, modality, series, images);
        let l = model.infer(&mut g, modality, s, i)?;
        out.extend_from_slice(g.value(l).data());
    }
    Tensor::new(vec![samples.len(), classes], out)
}

/// Eval-mode class predictions for `samples`, in order.
pub fn predict_samples(model: &SsnnModel, samples: &[FusedSample], modality: Modality, batch_size: usize) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    predict(&logits(model, samples, modality, batch_size)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    ssnn_config: SsnnConfig,
    parameters: BTreeMap<String, StoredTensor>,
}

/// Writes the model as one JSON document (via a temporary file and rename).
pub fn save_checkpoint(model: &SsnnModel, path: &Path) -> Result<()> {
    let parameters = model
        .named_tensors()
        .into_iter()
        .map(|(name, t, _)| {
            (
                name,
                StoredTensor {
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                },
            )
        })
        .collect();
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_FORMAT_VERSION,
        ssnn_config: model.config.clone(),
        parameters,
    };
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(&doc)?).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_doc(path: &Path) -> Result<CheckpointDoc> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            reason: "missing format_version".into(),
        })?;
    if version != CHECKPOINT_FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: version as u32,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn fill(model: &mut SsnnModel, mut params: BTreeMap<String, StoredTensor>) -> Result<()> {
    let mut problem = None;
    model.visit_mut(&mut |name, tensor, _| {
        if problem.is_some() {
            return;
        }
        match params.remove(&name) {
            None => problem = Some(format!("checkpoint lacks {name}")),
            Some(st) if st.shape != tensor.shape() => {
                problem = Some(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    st.shape,
                    tensor.shape()
                ))
            }
            Some(st) if st.values.len() != tensor.numel() => {
                problem = Some(format!("{name}: {} values for shape {:?}", st.values.len(), st.shape))
            }
            Some(st) => tensor.data_mut().copy_from_slice(&st.values),
        }
    });
    if let Some(p) = problem {
        return Err(Error::ShapeDisagreement(p));
    }
    if let Some(extra) = params.keys().next() {
        return Err(Error::ShapeDisagreement(format!("unexpected parameter {extra}")));
    }
    Ok(())
}

/// Loads a checkpoint, rebuilding the model from its stored config.
pub fn load_checkpoint(path: &Path) -> Result<SsnnModel> {
    let doc = read_doc(path)?;
    let mut model = build_ssnn(&doc.ssnn_config, 0)?;
    fill(&mut model, doc.parameters)?;
    Ok(model)
}

/// Loads a checkpoint into an existing model, which must share its config.
pub fn load_checkpoint_into(model: &mut SsnnModel, path: &Path) -> Result<()> {
    let doc = read_doc(path)?;
    if doc.ssnn_config != model.config {
        return Err(Error::ShapeDisagreement(
            "checkpoint was written for a different network configuration".into(),
        ));
    }
    let mut staged = model.clone();
    fill(&mut staged, doc.parameters)?;
    *model = staged;
    Ok(())
}

/// Everything needed to re-derive a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub train_config: TrainConfig,
    pub ssnn_config: SsnnConfig,
    pub dataset_fingerprint: String,
    pub train_samples: usize,
    pub history: TrainHistory,
}
