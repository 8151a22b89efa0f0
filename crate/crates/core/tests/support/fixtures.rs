//! Synthetic disc datasets and the overfit runs built on them.

use std::time::{Duration, Instant};

use cbstm_core::data::{Label, Provenance, SliceRecord};
use cbstm_core::metrics::{aggregate_segmentation, segment_image};
use cbstm_core::models::{ClassifierConfig, Model, ModelConfig, SegmenterConfig};
use cbstm_core::train::{evaluate, HyperParams, Predictions, Trainer};
use cbstm_core::{Result, RngState, Tensor};

pub const CLASSIFIER_IMAGES: usize = 16;
pub const CLASSIFIER_SIZE: usize = 64;
pub const CLASSIFIER_STEPS: usize = 200;
pub const SEGMENTER_IMAGES: usize = 8;
pub const SEGMENTER_SIZE: usize = 32;
pub const SEGMENTER_STEPS: usize = 300;
pub const SEGMENTER_DICE: f64 = 0.95;
pub const SEGMENTER_WIDTHS: [usize; 3] = [16, 32, 64];

fn record(image: Tensor, mask: Option<Tensor>, label: Label, i: usize) -> SliceRecord {
    let provenance = Provenance {
        volume: format!("synthetic{i}"),
        slice: 0,
    };
    SliceRecord::new(image, mask, label, provenance).expect("valid synthetic record")
}

/// Alternating bright discs (COVID) and blank images (healthy).
pub fn disc_classification_set(n: usize, size: usize, seed: u64) -> Vec<SliceRecord> {
    let mut rng = RngState::new(seed);
    let s = size as f64;
    (0..n)
        .map(|i| {
            let covid = i % 2 == 0;
            let (cy, cx, r) = (rng.uniform(0.3125 * s, 0.6875 * s), rng.uniform(0.3125 * s, 0.6875 * s), rng.uniform(0.125 * s, 0.21875 * s));
            let img = Tensor::from_fn([1, 3, size, size], |[_, _, y, x]| {
                let d = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                if covid && d <= r * r {
                    1.0
                } else {
                    0.0
                }
            });
            record(img, None, if covid { Label::Covid } else { Label::Healthy }, i)
        })
        .collect()
}

/// Bright disc lesions on a dim background, with masks.
pub fn disc_segmentation_set(n: usize, size: usize, seed: u64) -> Vec<SliceRecord> {
    let mut rng = RngState::new(seed);
    let s = size as f64;
    (0..n)
        .map(|i| {
            let (cy, cx, r) = (rng.uniform(0.3 * s, 0.7 * s), rng.uniform(0.3 * s, 0.7 * s), rng.uniform(0.2 * s, 0.3 * s));
            let inside = |y: usize, x: usize| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r;
            let img = Tensor::from_fn([1, 3, size, size], |[_, _, y, x]| if inside(y, x) { 0.9 } else { 0.3 });
            let mask = Tensor::from_fn([1, 1, size, size], |[_, _, y, x]| f64::from(u8::from(inside(y, x))));
            record(img, Some(mask), Label::Covid, i)
        })
        .collect()
}

/// Defaults (lr 1e−3, momentum 0.9, batch 12) without augmentation.
pub fn overfit_hyper_params() -> HyperParams {
    HyperParams {
        augment: false,
        ..HyperParams::default()
    }
}

pub struct OverfitRun {
    /// First step (1-based) at which the target was met.
    pub reached_at: Option<usize>,
    pub final_score: f64,
    pub steps: usize,
    pub elapsed: Duration,
}

/// Reduced classifier on 16 disc/blank images, minibatches of 12 from a
/// shuffled epoch order; eval-mode accuracy is measured after every step.
pub fn overfit_classifier(max_steps: usize) -> Result<OverfitRun> {
    let records = disc_classification_set(CLASSIFIER_IMAGES, CLASSIFIER_SIZE, 7);
    let (model, params) = Model::build(&ModelConfig::Classifier(ClassifierConfig::reduced(8)), 1)?;
    let hp = overfit_hyper_params();
    let batch_size = hp.batch_size;
    let mut trainer = Trainer::new(&model, params, hp, 1)?;
    let all: Vec<&SliceRecord> = records.iter().collect();
    let start = Instant::now();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut cursor = records.len();
    let mut accuracy = 0.0;
    for step in 1..=max_steps {
        if cursor >= records.len() {
            RngState::derive(1, &[step as u64 - 1]).shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + batch_size).min(records.len());
        let batch: Vec<&SliceRecord> = order[cursor..end].iter().map(|&i| &records[i]).collect();
        cursor = end;
        trainer.step(&batch)?;
        accuracy = trainer.measure(&all)?.1;
        if accuracy == 1.0 {
            return Ok(OverfitRun {
                reached_at: Some(step),
                final_score: accuracy,
                steps: step,
                elapsed: start.elapsed(),
            });
        }
    }
    Ok(OverfitRun {
        reached_at: None,
        final_score: accuracy,
        steps: max_steps,
        elapsed: start.elapsed(),
    })
}

/// Pooled lesion Dice of eval-mode predictions thresholded at 0.5.
pub fn lesion_dice(model: &Model, trainer: &Trainer<'_>, records: &[&SliceRecord]) -> Result<f64> {
    let Predictions::Segmentation { maps, masks } = evaluate(model, &trainer.params, records, 12)? else {
        unreachable!("segmenter yields maps");
    };
    let per_image = maps
        .iter()
        .zip(&masks)
        .map(|(m, t)| segment_image(m, t, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate_segmentation(&per_image, None)?.classes[1].dice)
}

/// Reduced segmenter on 8 disc-lesion images, full batch; Dice is checked
/// every `every` steps.
pub fn overfit_segmenter(max_steps: usize, every: usize) -> Result<OverfitRun> {
    let records = disc_segmentation_set(SEGMENTER_IMAGES, SEGMENTER_SIZE, 11);
    let mut config = SegmenterConfig::reduced(&SEGMENTER_WIDTHS);
    config.input_size = [SEGMENTER_SIZE, SEGMENTER_SIZE];
    let (model, params) = Model::build(&ModelConfig::Segmenter(config), 1)?;
    let mut trainer = Trainer::new(&model, params, overfit_hyper_params(), 1)?;
    let all: Vec<&SliceRecord> = records.iter().collect();
    let start = Instant::now();
    let mut dice = 0.0;
    for step in 1..=max_steps {
        trainer.step(&all)?;
        if step % every == 0 || step == max_steps {
            dice = lesion_dice(&model, &trainer, &all)?;
            if dice >= SEGMENTER_DICE {
                return Ok(OverfitRun {
                    reached_at: Some(step),
                    final_score: dice,
                    steps: step,
                    elapsed: start.elapsed(),
                });
            }
        }
    }
    Ok(OverfitRun {
        reached_at: None,
        final_score: dice,
        steps: max_steps,
        elapsed: start.elapsed(),
    })
}
