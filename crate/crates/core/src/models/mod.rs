//! End-to-end networks and their checkpoints.

mod classifier;
mod config;
mod segmenter;

use std::path::Path;

pub use classifier::Classifier;
pub use config::{AuxSource, ClassifierConfig, ModelConfig, SegmenterConfig, CLASSIFIER_STAGES};
pub use segmenter::Segmenter;

use crate::autograd::Var;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Ctx, FrozenConvProvider, ModelParameters};
use crate::tensor::{RngState, Tensor};

pub fn build_classifier(config: &ClassifierConfig, seed: u64) -> Result<(Classifier, ModelParameters)> {
    Classifier::build(config, seed)
}

pub fn build_segmenter(config: &SegmenterConfig, seed: u64) -> Result<(Segmenter, ModelParameters)> {
    Segmenter::build(config, seed)
}

#[derive(Clone, Debug)]
pub enum Model {
    Classifier(Classifier),
    Segmenter(Segmenter),
}

impl Model {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<(Model, ModelParameters)> {
        match config {
            ModelConfig::Classifier(c) => Classifier::build(c, seed).map(|(m, p)| (Model::Classifier(m), p)),
            ModelConfig::Segmenter(c) => Segmenter::build(c, seed).map(|(m, p)| (Model::Segmenter(m), p)),
            ModelConfig::Provider { .. } => Err(Error::Config(
                "a provider checkpoint holds auxiliary weights, not a network".into(),
            )),
        }
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Classifier(m) => ModelConfig::Classifier(m.config.clone()),
            Model::Segmenter(m) => ModelConfig::Segmenter(m.config.clone()),
        }
    }

    /// Probabilities: N×classes×1×1 for the classifier, N×2×H×W for the
    /// segmenter.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: &Var, rng: &mut RngState) -> Result<Var> {
        match self {
            Model::Classifier(m) => m.forward(cx, x, rng),
            Model::Segmenter(m) => m.forward(cx, x),
        }
    }

    pub fn predict(&self, params: &ModelParameters, input: &Tensor) -> Result<Tensor> {
        match self {
            Model::Classifier(m) => m.predict(params, input),
            Model::Segmenter(m) => m.predict(params, input),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Classifier(m) => m.param_count(),
            Model::Segmenter(m) => m.param_count(),
        }
    }
}

pub fn save_checkpoint(path: &Path, params: &ModelParameters, config: &ModelConfig, seed: u64) -> Result<()> {
    checkpoint::write(path, params, serde_json::to_value(config)?, seed)
}

/// Checkpoint contents rebuilt into a network.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub model: Model,
    pub params: ModelParameters,
    pub config: ModelConfig,
    pub seed: u64,
}

/// Rebuilds the network described by the checkpoint's own config.
pub fn load_checkpoint(path: &Path) -> Result<LoadedModel> {
    let data = checkpoint::read(path)?;
    let config: ModelConfig = serde_json::from_value(data.config.clone())
        .map_err(|e| Error::format(path, format!("checkpoint config: {e}")))?;
    let (model, params) = restore(&config, data.seed, &data.tensors)?;
    Ok(LoadedModel {
        model,
        params,
        config,
        seed: data.seed,
    })
}

/// Loads checkpoint tensors into the network described by `config`; fails on
/// the first tensor whose name or shape does not fit.
pub fn load_into(path: &Path, config: &ModelConfig) -> Result<LoadedModel> {
    let data = checkpoint::read(path)?;
    let (model, params) = restore(config, data.seed, &data.tensors)?;
    Ok(LoadedModel {
        model,
        params,
        config: config.clone(),
        seed: data.seed,
    })
}

fn restore(
    config: &ModelConfig,
    seed: u64,
    tensors: &indexmap::IndexMap<String, Tensor>,
) -> Result<(Model, ModelParameters)> {
    // Auxiliary weights come from the checkpoint itself, so the original
    // provider source need not exist any more.
    let layout = match config.clone() {
        ModelConfig::Classifier(mut c) => {
            c.aux = AuxSource::FrozenRandom;
            ModelConfig::Classifier(c)
        }
        ModelConfig::Segmenter(mut c) => {
            c.aux = AuxSource::FrozenRandom;
            ModelConfig::Segmenter(c)
        }
        other => other,
    };
    let (mut model, mut params) = Model::build(&layout, seed)?;
    params.assign_from(tensors)?;
    match (&mut model, config) {
        (Model::Classifier(m), ModelConfig::Classifier(c)) => m.config = c.clone(),
        (Model::Segmenter(m), ModelConfig::Segmenter(c)) => m.config = c.clone(),
        _ => unreachable!("layout built from the same config kind"),
    }
    Ok((model, params))
}

/// Writes a standalone provider checkpoint usable as [`AuxSource::Checkpoint`].
pub fn save_provider(path: &Path, provider: &FrozenConvProvider, seed: u64) -> Result<()> {
    let config = ModelConfig::Provider {
        stages: provider.stages().to_vec(),
    };
    save_checkpoint(path, &provider.to_params()?, &config, seed)
}
