//! Parameterized building blocks. A layer only remembers the names of its
//! tensors; values live in a [`ModelParameters`] registry.

use crate::autograd::{Graph, RunningStats, Var};
use crate::error::{Error, Result};
use crate::nn::ModelParameters;
use crate::ops::{Conv2dConfig, Mode};
use crate::tensor::{RngState, Tensor};

/// Everything a forward pass needs besides its input.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    pub params: &'a ModelParameters,
    pub mode: Mode,
}

impl<'a> Ctx<'a> {
    pub fn new(g: &'a mut Graph, params: &'a ModelParameters, mode: Mode) -> Self {
        Ctx { g, params, mode }
    }

    pub fn var(&mut self, name: &str) -> Result<Var> {
        self.params.var(self.g, name)
    }
}

/// He-normal kernel: `N(0, 2 / fan_in)`.
pub fn he_normal(shape: [usize; 4], rng: &mut RngState) -> Tensor {
    let fan_in = shape[1] * shape[2] * shape[3];
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: String,
    pub bias: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub cfg: Conv2dConfig,
}

impl Conv2dLayer {
    pub fn new(
        params: &mut ModelParameters,
        rng: &mut RngState,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        cfg: Conv2dConfig,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::Config(format!(
                "{prefix}: conv needs positive widths and kernel size"
            )));
        }
        let layer = Conv2dLayer {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            in_channels,
            out_channels,
            kernel,
            cfg,
        };
        params.register(&layer.weight, he_normal([out_channels, in_channels, kernel, kernel], rng))?;
        params.register(&layer.bias, Tensor::zeros([1, out_channels, 1, 1]))?;
        Ok(layer)
    }

    /// 1×1 channel projection.
    pub fn pointwise(
        params: &mut ModelParameters,
        rng: &mut RngState,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        Self::new(params, rng, prefix, in_channels, out_channels, 1, Conv2dConfig::same())
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let w = cx.var(&self.weight)?;
        let b = cx.var(&self.bias)?;
        cx.g.conv2d(x, &w, &b, self.cfg)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: String,
    pub beta: String,
    pub running_mean: String,
    pub running_var: String,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(params: &mut ModelParameters, prefix: &str, channels: usize) -> Result<Self> {
        let bn = BatchNorm2d {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            running_mean: format!("{prefix}.running_mean"),
            running_var: format!("{prefix}.running_var"),
            channels,
        };
        params.register(&bn.gamma, Tensor::ones([1, channels, 1, 1]))?;
        params.register(&bn.beta, Tensor::zeros([1, channels, 1, 1]))?;
        params.register_buffer(&bn.running_mean, Tensor::zeros([1, channels, 1, 1]))?;
        params.register_buffer(&bn.running_var, Tensor::ones([1, channels, 1, 1]))?;
        Ok(bn)
    }

    /// Training mode falls back to running statistics when a channel has
    /// fewer than two values in the batch.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let gamma = cx.var(&self.gamma)?;
        let beta = cx.var(&self.beta)?;
        let rm = cx.params.arc(&self.running_mean)?;
        let rv = cx.params.arc(&self.running_var)?;
        let [n, _, h, w] = x.dims();
        let mode = if cx.mode == Mode::Train && n * h * w < 2 {
            Mode::Eval
        } else {
            cx.mode
        };
        let running = RunningStats {
            mean: rm.data(),
            var: rv.data(),
        };
        let (y, updated) = cx.g.batch_norm(x, &gamma, &beta, running, mode)?;
        if let Some(u) = updated {
            let shape = [1, self.channels, 1, 1];
            cx.g.push_buffer_update(self.running_mean.clone(), Tensor::new(shape, u.mean)?);
            cx.g.push_buffer_update(self.running_var.clone(), Tensor::new(shape, u.var)?);
        }
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

/// conv → batch norm → relu.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2dLayer,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(
        params: &mut ModelParameters,
        rng: &mut RngState,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        cfg: Conv2dConfig,
    ) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: Conv2dLayer::new(params, rng, &format!("{prefix}.conv"), in_channels, out_channels, kernel, cfg)?,
            bn: BatchNorm2d::new(params, &format!("{prefix}.bn"), out_channels)?,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, &y)?;
        cx.g.relu(&y)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        params: &mut ModelParameters,
        rng: &mut RngState,
        prefix: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Self> {
        let l = Linear {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            in_features,
            out_features,
        };
        params.register(&l.weight, he_normal([out_features, in_features, 1, 1], rng))?;
        params.register(&l.bias, Tensor::zeros([1, out_features, 1, 1]))?;
        Ok(l)
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let w = cx.var(&self.weight)?;
        let b = cx.var(&self.bias)?;
        cx.g.fully_connected(x, &w, &b)
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}
