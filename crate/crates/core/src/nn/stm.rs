//! Split-transform-merge block with channel squeeze-and-boost.
//!
//! ```text
//!            ┌─ B: dilated conv ─ avg-pool (region) ─ 1×1 squeeze ─┐
//!            ├─ C: dilated conv ─ max-pool (edge)   ─ 1×1 squeeze ─┤
//!  input ────┤                                                     ├─ concat ─ 1×1 conv ─ BN ─ relu
//!            ├─ D: aux channels ─ avg-pool (region) ─ 1×1 squeeze ─┤
//!            └─ E: aux channels ─ max-pool (edge)   ─ 1×1 squeeze ─┘
//! ```
//!
//! B and C are trained; D and E come from a frozen [`AuxChannelProvider`]
//! and only their squeeze convs are trained. Pooling inside the block is
//! stride 1 and same-padded, so the block preserves `H×W`.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::layers::{Conv2dLayer, ConvBnRelu, Ctx};
use crate::nn::provider::{AuxChannelProvider, AuxStage};
use crate::nn::ModelParameters;
use crate::ops::{Conv2dConfig, PoolConfig};
use crate::tensor::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StmStageSpec {
    /// Channels per branch after squeezing.
    pub branch_width: usize,
    /// Channels leaving the block.
    pub output_width: usize,
    /// Dilation rates of branches B, C, D, E.
    #[serde(default = "default_dilations")]
    pub dilations: [usize; 4],
    /// Window of the in-block region/edge pooling.
    #[serde(default = "default_pool_window")]
    pub pool_window: usize,
}

fn default_dilations() -> [usize; 4] {
    [1, 2, 1, 2]
}

fn default_pool_window() -> usize {
    3
}

impl StmStageSpec {
    pub fn new(branch_width: usize, output_width: usize) -> Self {
        StmStageSpec {
            branch_width,
            output_width,
            dilations: default_dilations(),
            pool_window: default_pool_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branch_width == 0 || self.output_width == 0 {
            return Err(Error::Config("STM widths must be ≥ 1".into()));
        }
        if self.dilations.iter().any(|&d| d == 0) || self.pool_window == 0 {
            return Err(Error::Config("STM dilations and pool window must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Channel count of the concatenated (boosted) tensor.
    pub fn boosted_width(&self) -> usize {
        4 * self.branch_width
    }

    /// Auxiliary stages a provider must offer for branches D and E of a block
    /// that receives `in_channels`.
    pub fn aux_stages(&self, in_channels: usize) -> [AuxStage; 2] {
        let mk = |d| AuxStage {
            in_channels,
            width: self.branch_width,
            dilation: d,
        };
        [mk(self.dilations[2]), mk(self.dilations[3])]
    }
}

#[derive(Clone, Debug)]
pub struct StmBlock {
    pub spec: StmStageSpec,
    pub in_channels: usize,
    pub name: String,
    pub branch_b: ConvBnRelu,
    pub branch_c: ConvBnRelu,
    /// 1×1 squeezes of B, C, D, E in that order.
    pub squeeze: [Conv2dLayer; 4],
    pub merge: ConvBnRelu,
    /// Provider stage ids feeding D and E.
    pub aux_ids: [usize; 2],
}

impl StmBlock {
    pub fn new(
        params: &mut ModelParameters,
        rng: &mut RngState,
        name: &str,
        in_channels: usize,
        spec: StmStageSpec,
        aux_ids: [usize; 2],
    ) -> Result<Self> {
        spec.validate()?;
        let w = spec.branch_width;
        let dilated = |d| Conv2dConfig::dilated(d);
        let branch_b = ConvBnRelu::new(params, rng, &format!("{name}.b"), in_channels, w, 3, dilated(spec.dilations[0]))?;
        let branch_c = ConvBnRelu::new(params, rng, &format!("{name}.c"), in_channels, w, 3, dilated(spec.dilations[1]))?;
        let mut sq = |tag: &str| Conv2dLayer::pointwise(params, rng, &format!("{name}.squeeze_{tag}"), w, w);
        let squeeze = [sq("b")?, sq("c")?, sq("d")?, sq("e")?];
        let merge = ConvBnRelu::new(
            params,
            rng,
            &format!("{name}.merge"),
            spec.boosted_width(),
            spec.output_width,
            1,
            Conv2dConfig::same(),
        )?;
        Ok(StmBlock {
            spec,
            in_channels,
            name: name.to_string(),
            branch_b,
            branch_c,
            squeeze,
            merge,
            aux_ids,
        })
    }

    fn aux_var(&self, cx: &mut Ctx<'_>, x: &Var, aux: &dyn AuxChannelProvider, slot: usize) -> Result<Var> {
        let id = self.aux_ids[slot];
        let declared = aux.width(id);
        if declared != Some(self.spec.branch_width) {
            return Err(Error::Config(format!(
                "{}: provider stage {id} declares {declared:?} channels, block expects {}",
                self.name, self.spec.branch_width
            )));
        }
        let t = aux.produce(x.value(), id)?;
        let [n, c, h, w] = t.dims();
        let [xn, _, xh, xw] = x.dims();
        if (n, h, w) != (xn, xh, xw) || c != self.spec.branch_width {
            return Err(Error::Shape(format!(
                "{}: auxiliary tensor {} does not match block input {}",
                self.name,
                t.shape(),
                x.shape()
            )));
        }
        Ok(cx.g.detach(t))
    }

    /// Concatenated branch outputs, before the merge conv.
    pub fn boosted(&self, cx: &mut Ctx<'_>, x: &Var, aux: &dyn AuxChannelProvider) -> Result<Var> {
        if x.dims()[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {}",
                self.name,
                self.in_channels,
                x.dims()[1]
            )));
        }
        let pool = PoolConfig::smoothing(self.spec.pool_window);

        let b = self.branch_b.forward(cx, x)?;
        let b = cx.g.avg_pool2d(&b, pool)?;
        let b = self.squeeze[0].forward(cx, &b)?;

        let c = self.branch_c.forward(cx, x)?;
        let (c, _) = cx.g.max_pool2d(&c, pool)?;
        let c = self.squeeze[1].forward(cx, &c)?;

        let d = self.aux_var(cx, x, aux, 0)?;
        let d = cx.g.avg_pool2d(&d, pool)?;
        let d = self.squeeze[2].forward(cx, &d)?;

        let e = self.aux_var(cx, x, aux, 1)?;
        let (e, _) = cx.g.max_pool2d(&e, pool)?;
        let e = self.squeeze[3].forward(cx, &e)?;

        let boosted = cx.g.concat_channels(&[&b, &c, &d, &e])?;
        cx.g.trace(format!("{}.boosted", self.name), &boosted);
        Ok(boosted)
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: &Var, aux: &dyn AuxChannelProvider) -> Result<Var> {
        let boosted = self.boosted(cx, x, aux)?;
        let y = self.merge.forward(cx, &boosted)?;
        cx.g.trace(format!("{}.out", self.name), &y);
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.branch_b.param_count()
            + self.branch_c.param_count()
            + self.squeeze.iter().map(Conv2dLayer::param_count).sum::<usize>()
            + self.merge.param_count()
    }
}
