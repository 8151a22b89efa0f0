use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use cbstm_core::data::{Label, Split};
use cbstm_core::metrics::{
    aggregate_segmentation, detection_report, pca_project, pr_curve, roc_curve, segment_image, ImageSegmentation,
    DEFAULT_THRESHOLD,
};
use cbstm_core::models::{load_checkpoint, Model};
use cbstm_core::train::{evaluate, make_batch, Predictions, Task};
use cbstm_core::{Error, Tensor};

use crate::common::{make_dir, segmentation_candidate, write_json, write_text, Dataset, Failure};
use crate::Phase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which network the checkpoint must hold.
    #[arg(long, value_enum)]
    phase: Phase,
    /// Directory for report.json and the curve, PCA or per-image CSVs.
    #[arg(long)]
    out: PathBuf,
    /// COVID probability at or above which a slice is called positive.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Manifest split to score.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    split: SplitChoice,
    /// Slices per forward pass.
    #[arg(long, default_value_t = 12)]
    batch_size: usize,
}

const PCA_COMPONENTS: usize = 3;

#[derive(Serialize)]
struct PcaSummary {
    explained_variance_percent: Vec<f64>,
    rank_deficient: bool,
}

pub fn run(args: &EvalArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(Failure::usage("--threshold must lie in [0, 1]"));
    }
    let loaded = load_checkpoint(&args.checkpoint)?;
    let size = match (&loaded.model, args.phase) {
        (Model::Classifier(m), Phase::Detect) => m.config.input_size,
        (Model::Segmenter(m), Phase::Seg) => m.config.input_size,
        (m, p) => {
            return Err(Failure::usage(format!(
                "{} holds a {} network, which cannot run the {p:?} phase",
                args.checkpoint.display(),
                m.config().kind()
            )))
        }
    };
    let mut data = Dataset::load(&args.manifest, Some(size))?;
    let wanted = match args.split {
        SplitChoice::Train => Some(Split::Train),
        SplitChoice::Validation => Some(Split::Validation),
        SplitChoice::Test => Some(Split::Test),
        SplitChoice::All => None,
    };
    data = data.retain(|e, _| wanted.is_none_or(|s| e.split == s));
    if args.phase == Phase::Seg {
        data = data.retain(segmentation_candidate);
    }
    if data.len() == 0 {
        return Err(Failure::usage(format!(
            "{}: no records to evaluate in the {:?} split",
            args.manifest.display(),
            args.split
        )));
    }
    make_dir(&args.out)?;
    let refs: Vec<_> = data.records.iter().collect();
    match evaluate(&loaded.model, &loaded.params, &refs, args.batch_size)? {
        Predictions::Detection { probabilities, labels } => {
            let report = detection_report(&probabilities, &labels, args.threshold)?;
            write_json(&args.out.join("report.json"), &report)?;
            if let Ok((c, _)) = roc_curve(&probabilities, &labels) {
                write_text(&args.out.join("roc.csv"), &c.to_csv())?;
            }
            if let Ok((c, _)) = pr_curve(&probabilities, &labels) {
                write_text(&args.out.join("pr.csv"), &c.to_csv())?;
            }
            let mut csv = String::from("id,label,probability\n");
            for ((e, p), l) in data.entries.iter().zip(&probabilities).zip(&labels) {
                csv.push_str(&format!("{},{},{p}\n", e.id, label_name(*l)));
            }
            write_text(&args.out.join("predictions.csv"), &csv)?;
            if let Model::Classifier(m) = &loaded.model {
                let mut features = Vec::with_capacity(refs.len());
                for chunk in refs.chunks(args.batch_size.max(1)) {
                    let (x, _) = make_batch(chunk, Task::Detection)?;
                    features.extend(m.extract_features(&loaded.params, &x)?);
                }
                match pca_project(&features, PCA_COMPONENTS) {
                    Ok(p) => {
                        let names: Vec<String> = labels.iter().map(|&l| label_name(l).to_string()).collect();
                        write_text(&args.out.join("pca.csv"), &p.to_csv(Some(&names)))?;
                        write_json(
                            &args.out.join("pca.json"),
                            &PcaSummary {
                                explained_variance_percent: p.explained_variance_percent,
                                rank_deficient: p.rank_deficient,
                            },
                        )?;
                    }
                    Err(Error::Argument(why)) => eprintln!("warning: PCA skipped: {why}"),
                    Err(e) => return Err(e.into()),
                }
            }
            println!("{}", serde_json::to_string(&report)?);
        }
        Predictions::Segmentation { maps, masks } => {
            let images: Vec<ImageSegmentation> = maps
                .par_iter()
                .zip(&masks)
                .map(|(m, t)| segment_image(&binarize(m), t, None))
                .collect::<Result<_, Error>>()?;
            let report = aggregate_segmentation(&images, None)?;
            write_json(&args.out.join("report.json"), &report)?;
            let mut csv = String::from("id,lesion_dice,lesion_iou,lesion_bf_score\n");
            for (e, im) in data.entries.iter().zip(&images) {
                let r = aggregate_segmentation(std::slice::from_ref(im), None)?;
                let l = &r.classes[1];
                csv.push_str(&format!("{},{},{},{}\n", e.id, l.dice, l.iou, im.bf[1].value));
            }
            write_text(&args.out.join("per_image.csv"), &csv)?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(())
}

pub fn label_name(l: Label) -> &'static str {
    match l {
        Label::Covid => "covid",
        Label::Healthy => "healthy",
    }
}

/// Lesion wherever its probability beats background.
pub fn binarize(map: &Tensor) -> Tensor {
    map.map(|p| if p > 0.5 { 1.0 } else { 0.0 })
}
