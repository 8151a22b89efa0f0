//! Parameter registry, layers and the composite blocks of both networks.

pub mod layers;
mod params;
pub mod provider;
pub mod region_edge;
pub mod stm;

use std::path::Path;

pub use layers::{BatchNorm2d, Conv2dLayer, ConvBnRelu, Ctx, Linear};
pub use params::{ModelParameters, ParamKind, Parameter};
pub use provider::{AuxChannelProvider, AuxStage, FrozenConvProvider, ZeroProvider};
pub use region_edge::{DecoderBlock, DecoderBlockSpec, EncoderBlock, EncoderBlockSpec};
pub use stm::{StmBlock, StmStageSpec};

use crate::autograd::Var;
use crate::error::Result;

/// Frozen provider with He-normal weights drawn from `seed`.
pub fn frozen_random_provider(seed: u64, stages: &[AuxStage]) -> Result<FrozenConvProvider> {
    FrozenConvProvider::random(seed, stages)
}

/// Frozen provider whose weights are read from a checkpoint file.
pub fn checkpoint_provider(path: &Path, stages: &[AuxStage]) -> Result<FrozenConvProvider> {
    FrozenConvProvider::from_checkpoint(path, stages)
}

/// 1×1 projection to `layer.out_channels`.
pub fn squeeze_channels(cx: &mut Ctx<'_>, x: &Var, layer: &Conv2dLayer) -> Result<Var> {
    layer.forward(cx, x)
}
