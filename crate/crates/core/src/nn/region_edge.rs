//! Encoder and decoder blocks that fuse region (average) and edge (max)
//! pooling paths.
//!
//! Encoder: conv stack, then `avg ‖ max` downsampling fused by a 1×1 conv.
//! Decoder: `unpool ‖ upsample` fused by a 1×1 conv (note the max-first
//! order), boosted with frozen auxiliary channels, squeezed and refined.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::layers::{Conv2dLayer, ConvBnRelu, Ctx};
use crate::nn::provider::{AuxChannelProvider, AuxStage};
use crate::nn::ModelParameters;
use crate::ops::{Conv2dConfig, PoolConfig, PoolIndices};
use crate::tensor::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "default_convs")]
    pub convs: usize,
    #[serde(default = "default_pool")]
    pub pool_window: usize,
    #[serde(default = "default_pool")]
    pub pool_stride: usize,
}

fn default_convs() -> usize {
    2
}
fn default_pool() -> usize {
    2
}

impl EncoderBlockSpec {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        EncoderBlockSpec {
            in_channels,
            out_channels,
            convs: default_convs(),
            pool_window: default_pool(),
            pool_stride: default_pool(),
        }
    }

    fn pool(&self) -> PoolConfig {
        PoolConfig::new(self.pool_window, self.pool_stride, crate::ops::Padding::Same)
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.convs == 0 {
            return Err(Error::Config(format!("invalid encoder block {self:?}")));
        }
        if self.pool_window == 0 || self.pool_stride == 0 {
            return Err(Error::Config("encoder pool window/stride must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub spec: EncoderBlockSpec,
    pub name: String,
    pub convs: Vec<ConvBnRelu>,
    /// 1×1 conv over `avg ‖ max`.
    pub fuse: Conv2dLayer,
}

impl EncoderBlock {
    pub fn new(params: &mut ModelParameters, rng: &mut RngState, name: &str, spec: EncoderBlockSpec) -> Result<Self> {
        spec.validate()?;
        let mut convs = Vec::with_capacity(spec.convs);
        for i in 0..spec.convs {
            let cin = if i == 0 { spec.in_channels } else { spec.out_channels };
            convs.push(ConvBnRelu::new(
                params,
                rng,
                &format!("{name}.conv{i}"),
                cin,
                spec.out_channels,
                3,
                Conv2dConfig::same(),
            )?);
        }
        let fuse = Conv2dLayer::pointwise(params, rng, &format!("{name}.fuse"), 2 * spec.out_channels, spec.out_channels)?;
        Ok(EncoderBlock {
            spec,
            name: name.to_string(),
            convs,
            fuse,
        })
    }

    /// Downsampled fused features and the max-pool indices for the mirrored
    /// decoder.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: &Var) -> Result<(Var, PoolIndices)> {
        if x.dims()[1] != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {}",
                self.name,
                self.spec.in_channels,
                x.dims()[1]
            )));
        }
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(cx, &h)?;
        }
        let avg = cx.g.avg_pool2d(&h, self.spec.pool())?;
        let (max, indices) = cx.g.max_pool2d(&h, self.spec.pool())?;
        let cat = cx.g.concat_channels(&[&avg, &max])?;
        let y = self.fuse.forward(cx, &cat)?;
        cx.g.trace(format!("{}.out", self.name), &y);
        Ok((y, indices))
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(ConvBnRelu::param_count).sum::<usize>() + self.fuse.param_count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "default_convs")]
    pub convs: usize,
    /// Upsampling factor; mirrors the encoder's pool window.
    #[serde(default = "default_pool")]
    pub pool_window: usize,
    /// Channels expected from the auxiliary provider.
    pub aux_channels: usize,
}

impl DecoderBlockSpec {
    pub fn new(in_channels: usize, out_channels: usize, aux_channels: usize) -> Self {
        DecoderBlockSpec {
            in_channels,
            out_channels,
            convs: default_convs(),
            pool_window: default_pool(),
            aux_channels,
        }
    }

    /// Channels of the boosted tensor: fused features plus auxiliary.
    pub fn boosted_width(&self) -> usize {
        self.in_channels + self.aux_channels
    }

    pub fn aux_stage(&self) -> AuxStage {
        AuxStage {
            in_channels: self.in_channels,
            width: self.aux_channels,
            dilation: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.convs == 0 || self.pool_window == 0 {
            return Err(Error::Config(format!("invalid decoder block {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub spec: DecoderBlockSpec,
    pub name: String,
    /// 1×1 conv over `max ‖ avg`.
    pub fuse: Conv2dLayer,
    /// 1×1 conv from the boosted tensor to `out_channels`.
    pub squeeze: Conv2dLayer,
    pub refine: Vec<ConvBnRelu>,
    pub aux_id: usize,
}

impl DecoderBlock {
    pub fn new(
        params: &mut ModelParameters,
        rng: &mut RngState,
        name: &str,
        spec: DecoderBlockSpec,
        aux_id: usize,
    ) -> Result<Self> {
        spec.validate()?;
        let c = spec.in_channels;
        let fuse = Conv2dLayer::pointwise(params, rng, &format!("{name}.fuse"), 2 * c, c)?;
        let squeeze = Conv2dLayer::pointwise(params, rng, &format!("{name}.squeeze"), spec.boosted_width(), spec.out_channels)?;
        let mut refine = Vec::with_capacity(spec.convs);
        for i in 0..spec.convs {
            refine.push(ConvBnRelu::new(
                params,
                rng,
                &format!("{name}.refine{i}"),
                spec.out_channels,
                spec.out_channels,
                3,
                Conv2dConfig::same(),
            )?);
        }
        Ok(DecoderBlock {
            spec,
            name: name.to_string(),
            fuse,
            squeeze,
            refine,
            aux_id,
        })
    }

    /// Boosted tensor `fuse(unpool ‖ upsample) ‖ aux`, before the squeeze.
    pub fn boosted(
        &self,
        cx: &mut Ctx<'_>,
        x: &Var,
        indices: &PoolIndices,
        aux: &dyn AuxChannelProvider,
    ) -> Result<Var> {
        if x.dims()[1] != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {}",
                self.name,
                self.spec.in_channels,
                x.dims()[1]
            )));
        }
        if indices.output_shape() != x.shape() {
            return Err(Error::DecoderPairing(format!(
                "{}: indices pooled to {} but decoder input is {}",
                self.name,
                indices.output_shape(),
                x.shape()
            )));
        }
        let target = indices.input_shape();
        let boundary = cx.g.max_unpool2d(x, indices, target)?;
        let region = cx.g.upsample_nearest(x, self.spec.pool_window)?;
        let region = cx.g.crop(&region, target.h(), target.w())?;
        let cat = cx.g.concat_channels(&[&boundary, &region])?;
        let fused = self.fuse.forward(cx, &cat)?;

        let declared = aux.width(self.aux_id);
        if declared != Some(self.spec.aux_channels) {
            return Err(Error::Config(format!(
                "{}: provider stage {} declares {declared:?} channels, block expects {}",
                self.name, self.aux_id, self.spec.aux_channels
            )));
        }
        let a = aux.produce(region.value(), self.aux_id)?;
        let [an, ac, ah, aw] = a.dims();
        if (an, ah, aw) != (target.n(), target.h(), target.w()) || ac != self.spec.aux_channels {
            return Err(Error::Shape(format!(
                "{}: auxiliary tensor {} does not match {}",
                self.name,
                a.shape(),
                target
            )));
        }
        let a = cx.g.detach(a);
        let boosted = cx.g.concat_channels(&[&fused, &a])?;
        cx.g.trace(format!("{}.boosted", self.name), &boosted);
        Ok(boosted)
    }

    pub fn forward(
        &self,
        cx: &mut Ctx<'_>,
        x: &Var,
        indices: &PoolIndices,
        aux: &dyn AuxChannelProvider,
    ) -> Result<Var> {
        let boosted = self.boosted(cx, x, indices, aux)?;
        let mut y = self.squeeze.forward(cx, &boosted)?;
        for conv in &self.refine {
            y = conv.forward(cx, &y)?;
        }
        cx.g.trace(format!("{}.out", self.name), &y);
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.fuse.param_count()
            + self.squeeze.param_count()
            + self.refine.iter().map(ConvBnRelu::param_count).sum::<usize>()
    }
}
