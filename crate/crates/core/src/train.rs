//! SGD with momentum, the epoch loop and eval-mode prediction.

use std::path::PathBuf;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{AugmentationSpec, DatasetSplit, Label, SliceRecord};
use crate::error::{Error, Result};
use crate::models::{save_checkpoint, Model};
use crate::nn::{Ctx, ModelParameters};
use crate::ops::{Mode, Targets};
use crate::tensor::{RngState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Per-class cross-entropy weights.
    pub class_weights: Option<Vec<f64>>,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_grad_norm: Option<f64>,
    /// Random rotation/shear/flip of training records.
    pub augment: bool,
    /// Train on train ∪ validation (validation is still reported).
    pub retrain_on_validation: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 12,
            momentum: 0.9,
            class_weights: None,
            clip_grad_norm: None,
            augment: true,
            retrain_on_validation: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be ≥ 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip threshold {c} must be positive")));
            }
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::Config(format!("class weights {w:?} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Velocity per trainable parameter, created at zero on first use.
#[derive(Clone, Debug, Default)]
pub struct SgdmState {
    pub velocity: IndexMap<String, Tensor>,
}

/// `v ← momentum·v + g`, `p ← p − lr·v` over every trainable parameter,
/// then clears gradients. Frozen weights and running statistics are not
/// touched. Returns the global gradient norm before clipping.
pub fn sgdm_step(params: &mut ModelParameters, state: &mut SgdmState, hp: &HyperParams) -> Result<f64> {
    let mut sq = 0.0;
    for (name, _, grad) in params.trainable_mut() {
        let g = grad.ok_or_else(|| Error::Training(format!("no gradient for trainable parameter `{name}`")))?;
        sq += g.data().iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm is {norm}")));
    }
    let scale = match hp.clip_grad_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    for (name, value, grad) in params.trainable_mut() {
        let g = grad.expect("checked above");
        let v = state
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(value.shape()));
        for ((p, vi), gi) in value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = hp.momentum * *vi + scale * gi;
            *p -= hp.learning_rate * *vi;
        }
    }
    params.zero_grads();
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Detection,
    Segmentation,
}

impl Task {
    pub fn of(model: &Model) -> Task {
        match model {
            Model::Classifier(_) => Task::Detection,
            Model::Segmenter(_) => Task::Segmentation,
        }
    }
}

/// Stacks records into an input batch with matching targets.
pub fn make_batch(records: &[&SliceRecord], task: Task) -> Result<(Tensor, Targets)> {
    if records.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let images: Vec<Tensor> = records.iter().map(|r| r.image.clone()).collect();
    let x = Tensor::stack_batch(&images)?;
    let targets = match task {
        Task::Detection => Targets::labels(records.iter().map(|r| r.label.index()).collect()),
        Task::Segmentation => {
            let [n, _, h, w] = x.dims();
            let mut classes = Vec::with_capacity(n * h * w);
            for r in records {
                let m = r.mask.as_ref().ok_or_else(|| {
                    Error::Evaluation(format!(
                        "record {}:{} has no mask",
                        r.provenance.volume, r.provenance.slice
                    ))
                })?;
                classes.extend(m.data().iter().map(|&v| usize::from(v > 0.0)));
            }
            Targets::new(n, h, w, classes)?
        }
    };
    Ok((x, targets))
}

/// `(correct, total)` argmax predictions against targets.
fn tally(probs: &Tensor, targets: &Targets) -> (usize, usize) {
    let [n, c, h, w] = probs.dims();
    let plane = h * w;
    let mut correct = 0;
    for b in 0..n {
        for i in 0..plane {
            let mut best = 0;
            for k in 1..c {
                if probs.data()[(b * c + k) * plane + i] > probs.data()[(b * c + best) * plane + i] {
                    best = k;
                }
            }
            correct += usize::from(best == targets.classes()[b * plane + i]);
        }
    }
    (correct, n * plane)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
    pub grad_norm: f64,
}

/// Owns the parameters and optimizer state of one training run.
pub struct Trainer<'m> {
    pub model: &'m Model,
    pub params: ModelParameters,
    pub state: SgdmState,
    pub hp: HyperParams,
    pub seed: u64,
    pub steps: u64,
}

const DROPOUT_STREAM: u64 = 0xd0;
const AUGMENT_STREAM: u64 = 0xa6;
const SHUFFLE_STREAM: u64 = 0x5f;

impl<'m> Trainer<'m> {
    pub fn new(model: &'m Model, params: ModelParameters, hp: HyperParams, seed: u64) -> Result<Self> {
        hp.validate()?;
        Ok(Trainer {
            model,
            params,
            state: SgdmState::default(),
            hp,
            seed,
            steps: 0,
        })
    }

    pub fn task(&self) -> Task {
        Task::of(self.model)
    }

    /// One forward/backward/update on `batch`, in training mode.
    pub fn step(&mut self, batch: &[&SliceRecord]) -> Result<StepStats> {
        let (x, targets) = make_batch(batch, self.task())?;
        let mut rng = RngState::derive(self.seed, &[DROPOUT_STREAM, self.steps]);
        let mut g = Graph::new();
        let (loss, probs) = {
            let mut cx = Ctx::new(&mut g, &self.params, Mode::Train);
            let xv = cx.g.constant(x);
            let probs = self.model.forward(&mut cx, &xv, &mut rng)?;
            let loss = cx.g.cross_entropy(&probs, &targets, self.hp.class_weights.as_deref())?;
            (loss, probs)
        };
        let value = loss.value().item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {value} at step {}", self.steps)));
        }
        let (correct, total) = tally(probs.value(), &targets);
        let grads = g.backward(&loss)?;
        self.params.accumulate(grads)?;
        let grad_norm = sgdm_step(&mut self.params, &mut self.state, &self.hp)?;
        self.steps += 1;
        Ok(StepStats {
            loss: value,
            correct,
            total,
            grad_norm,
        })
    }

    /// Eval-mode loss and accuracy over `records`.
    pub fn measure(&self, records: &[&SliceRecord]) -> Result<(f64, f64)> {
        measure(self.model, &self.params, records, self.hp.batch_size, self.hp.class_weights.as_deref())
    }
}

/// Eval-mode mean loss and accuracy (per image for detection, per pixel for
/// segmentation).
pub fn measure(
    model: &Model,
    params: &ModelParameters,
    records: &[&SliceRecord],
    batch_size: usize,
    weights: Option<&[f64]>,
) -> Result<(f64, f64)> {
    let task = Task::of(model);
    let (mut loss_sum, mut correct, mut total) = (0.0, 0, 0);
    for chunk in records.chunks(batch_size.max(1)) {
        let (x, targets) = make_batch(chunk, task)?;
        let probs = model.predict(params, &x)?;
        let loss = crate::ops::dense::cross_entropy_forward(&probs, &targets, weights)?;
        let (c, t) = tally(&probs, &targets);
        loss_sum += loss * chunk.len() as f64;
        correct += c;
        total += t;
    }
    if records.is_empty() {
        return Ok((0.0, 0.0));
    }
    Ok((loss_sum / records.len() as f64, correct as f64 / total as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub checkpoint: Option<PathBuf>,
    /// Diagnostic when training stopped on a non-finite loss.
    pub aborted: Option<String>,
    /// Kept out of serialized reports so identical runs serialize
    /// identically.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub augmentation: AugmentationSpec,
    /// Final parameters are written here after the last epoch.
    pub checkpoint: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub params: ModelParameters,
}

/// Shuffles train by `(seed, epoch)`, runs SGDM over batches of at most
/// `hp.batch_size` (the last partial batch is kept), then measures the
/// validation split in eval mode. A non-finite loss stops the run; the
/// report then holds the completed epochs and `aborted` says why.
pub fn train(
    model: &Model,
    params: ModelParameters,
    records: &[SliceRecord],
    split: &DatasetSplit,
    hp: &HyperParams,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    options.augmentation.validate()?;
    let started = Instant::now();
    let mut train_idx = split.train.clone();
    if hp.retrain_on_validation {
        train_idx.extend_from_slice(&split.validation);
        train_idx.sort_unstable();
    }
    if train_idx.is_empty() || split.validation.is_empty() {
        return Err(Error::Training("train and validation splits must be nonempty".into()));
    }
    if let Some(&bad) = train_idx.iter().chain(&split.validation).find(|&&i| i >= records.len()) {
        return Err(Error::Training(format!("split index {bad} beyond {} records", records.len())));
    }
    let validation: Vec<&SliceRecord> = split.validation.iter().map(|&i| &records[i]).collect();

    let mut trainer = Trainer::new(model, params, hp.clone(), seed)?;
    let mut report = TrainReport {
        epochs: Vec::with_capacity(hp.epochs),
        checkpoint: None,
        aborted: None,
        wall_clock_seconds: 0.0,
    };
    'epochs: for epoch in 0..hp.epochs {
        let mut order = train_idx.clone();
        RngState::derive(seed, &[SHUFFLE_STREAM, epoch as u64]).shuffle(&mut order);
        let (mut loss_sum, mut correct, mut total, mut seen) = (0.0, 0, 0, 0);
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<SliceRecord> = chunk
                .iter()
                .map(|&i| {
                    if hp.augment {
                        let mut rng = RngState::derive(seed, &[AUGMENT_STREAM, epoch as u64, i as u64]);
                        crate::data::augment(&records[i], &options.augmentation, &mut rng)
                    } else {
                        Ok(records[i].clone())
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&SliceRecord> = batch.iter().collect();
            match trainer.step(&refs) {
                Ok(s) => {
                    loss_sum += s.loss * chunk.len() as f64;
                    correct += s.correct;
                    total += s.total;
                    seen += chunk.len();
                }
                Err(Error::NonFinite(why)) => {
                    report.aborted = Some(format!("epoch {epoch}: {why}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let (validation_loss, validation_accuracy) = match trainer.measure(&validation) {
            Ok(v) => v,
            Err(Error::NonFinite(why)) => {
                report.aborted = Some(format!("epoch {epoch} validation: {why}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if !validation_loss.is_finite() {
            report.aborted = Some(format!("epoch {epoch}: validation loss {validation_loss}"));
            break;
        }
        report.epochs.push(EpochReport {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / total as f64,
            validation_loss,
            validation_accuracy,
        });
    }
    if report.aborted.is_none() {
        if let Some(path) = &options.checkpoint {
            save_checkpoint(path, &trainer.params, &model.config(), seed)?;
            report.checkpoint = Some(path.clone());
        }
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        report,
        params: trainer.params,
    })
}

/// Eval-mode outputs paired with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    /// COVID probability and true label per image.
    Detection { probabilities: Vec<f64>, labels: Vec<Label> },
    /// Per-pixel lesion probability maps (1×1×H×W) and true masks.
    Segmentation { maps: Vec<Tensor>, masks: Vec<Tensor> },
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Detection { probabilities, .. } => probabilities.len(),
            Predictions::Segmentation { maps, .. } => maps.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs the model in eval mode over `records` in batches of `batch_size`.
pub fn evaluate(
    model: &Model,
    params: &ModelParameters,
    records: &[&SliceRecord],
    batch_size: usize,
) -> Result<Predictions> {
    let task = Task::of(model);
    let positive = Label::Covid.index();
    match task {
        Task::Detection => {
            let (mut probabilities, mut labels) = (Vec::new(), Vec::new());
            for chunk in records.chunks(batch_size.max(1)) {
                let (x, _) = make_batch(chunk, task)?;
                let p = model.predict(params, &x)?;
                let classes = p.dims()[1];
                probabilities.extend(p.data().chunks(classes).map(|row| row[positive]));
                labels.extend(chunk.iter().map(|r| r.label));
            }
            Ok(Predictions::Detection { probabilities, labels })
        }
        Task::Segmentation => {
            let (mut maps, mut masks) = (Vec::new(), Vec::new());
            for chunk in records.chunks(batch_size.max(1)) {
                let (x, _) = make_batch(chunk, task)?;
                let p = model.predict(params, &x)?;
                for (b, r) in chunk.iter().enumerate() {
                    maps.push(p.narrow_batch(b, 1)?.narrow_channels(positive, 1)?);
                    masks.push(r.mask.clone().expect("make_batch checked masks"));
                }
            }
            Ok(Predictions::Segmentation { maps, masks })
        }
    }
}
