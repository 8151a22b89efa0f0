//! Detection network: stem conv, three STM stages each followed by a 2×2 max
//! pool, global average pool, dropout, fully connected head and softmax.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::config::{AuxSource, ClassifierConfig};
use crate::nn::provider::AUX_PREFIX;
use crate::nn::{ConvBnRelu, Ctx, FrozenConvProvider, Linear, ModelParameters, StmBlock};
use crate::ops::{Conv2dConfig, Mode, PoolConfig};
use crate::tensor::{RngState, Tensor};

#[derive(Clone, Debug)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub stem: ConvBnRelu,
    pub stages: Vec<StmBlock>,
    pub head: Linear,
}

impl Classifier {
    /// Builds the layer layout and a freshly initialized registry.
    pub fn build(config: &ClassifierConfig, seed: u64) -> Result<(Self, ModelParameters)> {
        config.validate()?;
        let mut params = ModelParameters::new();
        let mut rng = RngState::derive(seed, &[0xc1a5]);
        let stem = ConvBnRelu::new(
            &mut params,
            &mut rng,
            "stem",
            config.in_channels,
            config.stem_width,
            3,
            Conv2dConfig::same(),
        )?;
        let mut stages = Vec::with_capacity(config.stages.len());
        for (s, (spec, cin)) in config.stages.iter().zip(config.stage_inputs()).enumerate() {
            stages.push(StmBlock::new(&mut params, &mut rng, &format!("stm{s}"), cin, *spec, [2 * s, 2 * s + 1])?);
        }
        let head = Linear::new(&mut params, &mut rng, "head.fc", config.feature_width(), config.classes)?;

        let provider = match &config.aux {
            AuxSource::FrozenRandom => FrozenConvProvider::random(seed, &config.aux_stages())?,
            AuxSource::Checkpoint { path } => FrozenConvProvider::from_checkpoint(path, &config.aux_stages())?,
        };
        provider.register_frozen(&mut params, AUX_PREFIX)?;

        Ok((
            Classifier {
                config: config.clone(),
                stem,
                stages,
                head,
            },
            params,
        ))
    }

    fn provider(&self, params: &ModelParameters) -> Result<FrozenConvProvider> {
        FrozenConvProvider::from_params(params, AUX_PREFIX, &self.config.aux_stages())
    }

    fn check_input(&self, x: &Var) -> Result<()> {
        let [_, c, h, w] = x.dims();
        let f = self.config.downsampling();
        if c != self.config.in_channels || h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "classifier expects N×{}×H×W with H, W divisible by {f}; got {}",
                self.config.in_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Global-pooled features, N×F×1×1.
    pub fn features(&self, cx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        self.check_input(x)?;
        let aux = self.provider(cx.params)?;
        let mut h = self.stem.forward(cx, x)?;
        for stage in &self.stages {
            h = stage.forward(cx, &h, &aux)?;
            h = cx.g.max_pool2d(&h, PoolConfig::downsample(2))?.0;
        }
        cx.g.global_avg_pool(&h)
    }

    /// Class logits, N×classes×1×1. `rng` drives dropout in training mode.
    pub fn logits(&self, cx: &mut Ctx<'_>, x: &Var, rng: &mut RngState) -> Result<Var> {
        let f = self.features(cx, x)?;
        let f = cx.g.dropout(&f, self.config.dropout, rng, cx.mode)?;
        self.head.forward(cx, &f)
    }

    /// Class probabilities, N×classes×1×1.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: &Var, rng: &mut RngState) -> Result<Var> {
        let z = self.logits(cx, x, rng)?;
        cx.g.softmax(&z)
    }

    /// Eval-mode probabilities without recording a tape.
    pub fn predict(&self, params: &ModelParameters, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let mut cx = Ctx::new(&mut g, params, Mode::Eval);
        let x = cx.g.constant(input.clone());
        let mut rng = RngState::new(0);
        Ok(self.forward(&mut cx, &x, &mut rng)?.to_tensor())
    }

    /// Post-pool, pre-dropout feature vector per image.
    pub fn extract_features(&self, params: &ModelParameters, input: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::inference();
        let mut cx = Ctx::new(&mut g, params, Mode::Eval);
        let x = cx.g.constant(input.clone());
        let f = self.features(&mut cx, &x)?;
        let width = f.dims()[1];
        Ok(f.value().data().chunks(width).map(<[f64]>::to_vec).collect())
    }

    /// Trainable parameter count, excluding batch-norm running statistics
    /// and frozen auxiliary weights.
    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self.stages.iter().map(StmBlock::param_count).sum::<usize>()
            + self.head.param_count()
    }
}
