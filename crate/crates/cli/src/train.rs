use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cbstm_core::data::{AugmentationSpec, DatasetSplit, Split};
use cbstm_core::models::{ClassifierConfig, Model, ModelConfig, SegmenterConfig};
use cbstm_core::train::{train, HyperParams, TrainOptions};

use crate::common::{make_dir, segmentation_candidate, write_json, write_text, Dataset, Failure};
use crate::Phase;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON-lines manifest written by `slice`.
    #[arg(long)]
    manifest: PathBuf,
    /// JSON run config with optional `model`, `hyper_params` and
    /// `augmentation` sections; omitted fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for initialization, shuffling, augmentation and dropout.
    #[arg(long)]
    seed: u64,
    /// Directory for model.ckpt, report.jsonl and run.json.
    #[arg(long)]
    out: PathBuf,
    /// Epochs [default: 10, or the config value].
    #[arg(long)]
    epochs: Option<usize>,
    /// SGDM learning rate [default: 0.001, or the config value].
    #[arg(long)]
    lr: Option<f64>,
    /// Mini-batch size [default: 12, or the config value].
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig<M> {
    pub model: M,
    pub hyper_params: HyperParams,
    pub augmentation: AugmentationSpec,
}

fn read_config<M: DeserializeOwned + Default>(path: Option<&Path>) -> Result<RunConfig<M>, Failure> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Echoed on stdout and saved as run.json before training starts.
#[derive(Serialize)]
struct RunHeader<'a> {
    command: &'a str,
    seed: u64,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    momentum: f64,
    augment: bool,
    train_records: usize,
    validation_records: usize,
    parameters: usize,
    model: &'a ModelConfig,
}

pub fn run(args: &TrainArgs, phase: Phase) -> Result<(), Failure> {
    let (config, mut hp, augmentation) = match phase {
        Phase::Detect => {
            let c: RunConfig<ClassifierConfig> = read_config(args.config.as_deref())?;
            (ModelConfig::Classifier(c.model), c.hyper_params, c.augmentation)
        }
        Phase::Seg => {
            let c: RunConfig<SegmenterConfig> = read_config(args.config.as_deref())?;
            (ModelConfig::Segmenter(c.model), c.hyper_params, c.augmentation)
        }
    };
    if let Some(e) = args.epochs {
        hp.epochs = e;
    }
    if let Some(lr) = args.lr {
        hp.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        hp.batch_size = b;
    }
    hp.validate()?;
    augmentation.validate()?;
    let (model, params) = Model::build(&config, args.seed)?;
    let size = match &config {
        ModelConfig::Classifier(c) => c.input_size,
        ModelConfig::Segmenter(c) => c.input_size,
        ModelConfig::Provider { .. } => unreachable!("built from a network config"),
    };

    let mut data = Dataset::load(&args.manifest, Some(size))?;
    if phase == Phase::Seg {
        data = data.retain(segmentation_candidate);
    }
    let split = DatasetSplit {
        train: data.indices(Split::Train),
        validation: data.indices(Split::Validation),
        test: data.indices(Split::Test),
        seed: args.seed,
        test_fraction: 0.0,
        validation_fraction: 0.0,
    };
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Failure::usage(format!(
            "{}: need train and validation records for this phase, found {} and {}",
            args.manifest.display(),
            split.train.len(),
            split.validation.len()
        )));
    }

    let header = RunHeader {
        command: match phase {
            Phase::Detect => "train-detect",
            Phase::Seg => "train-seg",
        },
        seed: args.seed,
        learning_rate: hp.learning_rate,
        epochs: hp.epochs,
        batch_size: hp.batch_size,
        momentum: hp.momentum,
        augment: hp.augment,
        train_records: split.train.len(),
        validation_records: split.validation.len(),
        parameters: model.param_count(),
        model: &config,
    };
    println!("{}", serde_json::to_string(&header)?);
    make_dir(&args.out)?;
    write_json(&args.out.join("run.json"), &header)?;

    let checkpoint = args.out.join("model.ckpt");
    let options = TrainOptions {
        augmentation,
        checkpoint: Some(checkpoint),
    };
    let outcome = train(&model, params, &data.records, &split, &hp, args.seed, &options)?;
    let lines = outcome.report.to_json_lines()?;
    print!("{lines}");
    write_text(&args.out.join("report.jsonl"), &lines)?;
    if let Some(why) = outcome.report.aborted {
        return Err(Failure::numeric(format!("training aborted: {why}")));
    }
    eprintln!("trained in {:.1}s", outcome.report.wall_clock_seconds);
    Ok(())
}
