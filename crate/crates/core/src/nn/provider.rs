//! Auxiliary channel sources for channel boosting.
//!
//! A provider stands in for a separately trained feature extractor: it maps
//! a block's input to extra feature maps that the consuming network
//! concatenates with its own channels but never trains. Its output enters the
//! graph as a constant, so no gradient reaches the provider's weights.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::layers::he_normal;
use crate::nn::ModelParameters;
use crate::ops::{conv, relu, Conv2dConfig, ConvPlan};
use crate::tensor::{RngState, Tensor};

/// One auxiliary output: a frozen `3×3` conv + relu from `in_channels` to
/// `width` channels at the given dilation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxStage {
    pub in_channels: usize,
    pub width: usize,
    pub dilation: usize,
}

pub trait AuxChannelProvider {
    fn stage_count(&self) -> usize;

    /// Declared channel count of `stage`.
    fn width(&self, stage: usize) -> Option<usize>;

    /// Feature maps for `stage`, with the batch and spatial dims of `input`.
    fn produce(&self, input: &Tensor, stage: usize) -> Result<Tensor>;
}

/// Shallow frozen conv stack, one per stage.
#[derive(Clone, Debug)]
pub struct FrozenConvProvider {
    stages: Vec<AuxStage>,
    kernels: Vec<Arc<Tensor>>,
    biases: Vec<Arc<Tensor>>,
}

pub const KERNEL: usize = 3;

fn weight_name(prefix: &str, stage: usize) -> String {
    format!("{prefix}.{stage}.weight")
}

fn bias_name(prefix: &str, stage: usize) -> String {
    format!("{prefix}.{stage}.bias")
}

impl FrozenConvProvider {
    /// Random (He-normal) frozen weights from `seed`.
    pub fn random(seed: u64, stages: &[AuxStage]) -> Result<Self> {
        let mut rng = RngState::derive(seed, &[0xa0c5]);
        let mut kernels = Vec::with_capacity(stages.len());
        let mut biases = Vec::with_capacity(stages.len());
        for s in stages {
            validate_stage(s)?;
            kernels.push(Arc::new(he_normal([s.width, s.in_channels, KERNEL, KERNEL], &mut rng)));
            biases.push(Arc::new(Tensor::zeros([1, s.width, 1, 1])));
        }
        Ok(FrozenConvProvider {
            stages: stages.to_vec(),
            kernels,
            biases,
        })
    }

    /// Reads weights named `{prefix}.{stage}.weight|bias` from a registry.
    pub fn from_params(params: &ModelParameters, prefix: &str, stages: &[AuxStage]) -> Result<Self> {
        let mut kernels = Vec::with_capacity(stages.len());
        let mut biases = Vec::with_capacity(stages.len());
        for (i, s) in stages.iter().enumerate() {
            validate_stage(s)?;
            let k = params.arc(&weight_name(prefix, i))?;
            let b = params.arc(&bias_name(prefix, i))?;
            check_stage_tensors(i, s, &k, &b)?;
            kernels.push(k);
            biases.push(b);
        }
        Ok(FrozenConvProvider {
            stages: stages.to_vec(),
            kernels,
            biases,
        })
    }

    /// Loads the `aux.*` tensors of any checkpoint and checks them against the
    /// declared stages.
    pub fn from_checkpoint(path: &Path, stages: &[AuxStage]) -> Result<Self> {
        let data = checkpoint::read(path)?;
        let mut kernels = Vec::with_capacity(stages.len());
        let mut biases = Vec::with_capacity(stages.len());
        for (i, s) in stages.iter().enumerate() {
            validate_stage(s)?;
            let fetch = |name: String| {
                data.tensors.get(&name).cloned().map(Arc::new).ok_or_else(|| {
                    Error::Config(format!("checkpoint {} has no tensor `{name}`", path.display()))
                })
            };
            let k = fetch(weight_name(AUX_PREFIX, i))?;
            let b = fetch(bias_name(AUX_PREFIX, i))?;
            check_stage_tensors(i, s, &k, &b)?;
            kernels.push(k);
            biases.push(b);
        }
        Ok(FrozenConvProvider {
            stages: stages.to_vec(),
            kernels,
            biases,
        })
    }

    /// Adds the provider's weights to `params` as frozen entries.
    pub fn register_frozen(&self, params: &mut ModelParameters, prefix: &str) -> Result<()> {
        for (i, (k, b)) in self.kernels.iter().zip(&self.biases).enumerate() {
            params.register_frozen(&weight_name(prefix, i), Arc::clone(k))?;
            params.register_frozen(&bias_name(prefix, i), Arc::clone(b))?;
        }
        Ok(())
    }

    /// Registry holding just the provider weights under [`AUX_PREFIX`].
    pub fn to_params(&self) -> Result<ModelParameters> {
        let mut p = ModelParameters::new();
        self.register_frozen(&mut p, AUX_PREFIX)?;
        Ok(p)
    }

    pub fn stages(&self) -> &[AuxStage] {
        &self.stages
    }
}

/// Name prefix used for provider weights inside model registries.
pub const AUX_PREFIX: &str = "aux";

fn validate_stage(s: &AuxStage) -> Result<()> {
    if s.in_channels == 0 || s.width == 0 || s.dilation == 0 {
        return Err(Error::Config(format!("invalid auxiliary stage {s:?}")));
    }
    Ok(())
}

fn check_stage_tensors(i: usize, s: &AuxStage, k: &Tensor, b: &Tensor) -> Result<()> {
    if k.dims() != [s.width, s.in_channels, KERNEL, KERNEL] || b.len() != s.width {
        return Err(Error::Config(format!(
            "auxiliary stage {i} declares {}→{} channels but stored weights are {}",
            s.in_channels,
            s.width,
            k.shape()
        )));
    }
    Ok(())
}

impl AuxChannelProvider for FrozenConvProvider {
    fn stage_count(&self) -> usize {
        self.stages.len()
    }

    fn width(&self, stage: usize) -> Option<usize> {
        self.stages.get(stage).map(|s| s.width)
    }

    fn produce(&self, input: &Tensor, stage: usize) -> Result<Tensor> {
        let s = self
            .stages
            .get(stage)
            .ok_or_else(|| Error::Config(format!("provider has no stage {stage}")))?;
        let plan = ConvPlan::new(input.shape(), self.kernels[stage].shape(), Conv2dConfig::dilated(s.dilation))?;
        let y = conv::conv2d_forward(input, &self.kernels[stage], self.biases[stage].data(), &plan);
        Ok(relu(&y))
    }
}

/// Provider that emits all-zero channels; for ablations and tests.
#[derive(Clone, Debug)]
pub struct ZeroProvider {
    pub widths: Vec<usize>,
}

impl AuxChannelProvider for ZeroProvider {
    fn stage_count(&self) -> usize {
        self.widths.len()
    }

    fn width(&self, stage: usize) -> Option<usize> {
        self.widths.get(stage).copied()
    }

    fn produce(&self, input: &Tensor, stage: usize) -> Result<Tensor> {
        let w = self
            .width(stage)
            .ok_or_else(|| Error::Config(format!("provider has no stage {stage}")))?;
        let [n, _, h, wd] = input.dims();
        Ok(Tensor::zeros([n, w, h, wd]))
    }
}
