//! Segmentation network: region/edge encoder blocks, mirrored channel-boosted
//! decoder blocks, and a 2×2 same-padded conv to a per-pixel 2-class softmax.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::config::{AuxSource, SegmenterConfig};
use crate::nn::provider::AUX_PREFIX;
use crate::nn::{
    Conv2dLayer, Ctx, DecoderBlock, DecoderBlockSpec, EncoderBlock, EncoderBlockSpec, FrozenConvProvider,
    ModelParameters,
};
use crate::ops::{Conv2dConfig, Mode};
use crate::tensor::{RngState, Tensor};

#[derive(Clone, Debug)]
pub struct Segmenter {
    pub config: SegmenterConfig,
    pub encoders: Vec<EncoderBlock>,
    /// Deepest first, so `decoders[j]` consumes the indices of
    /// `encoders[len - 1 - j]`.
    pub decoders: Vec<DecoderBlock>,
    pub head: Conv2dLayer,
}

impl Segmenter {
    pub fn build(config: &SegmenterConfig, seed: u64) -> Result<(Self, ModelParameters)> {
        config.validate()?;
        let mut params = ModelParameters::new();
        let mut rng = RngState::derive(seed, &[0x5e9]);
        let widths = &config.encoder_widths;

        let mut encoders = Vec::with_capacity(widths.len());
        let mut cin = config.in_channels;
        for (i, &w) in widths.iter().enumerate() {
            let mut spec = EncoderBlockSpec::new(cin, w);
            spec.convs = config.convs_per_block;
            encoders.push(EncoderBlock::new(&mut params, &mut rng, &format!("enc{i}"), spec)?);
            cin = w;
        }

        let mut decoders = Vec::with_capacity(widths.len());
        for (j, (&(din, dout), aux)) in config.decoder_plan().iter().zip(config.decoder_aux()).enumerate() {
            let mut spec = DecoderBlockSpec::new(din, dout, aux);
            spec.convs = config.convs_per_block;
            decoders.push(DecoderBlock::new(&mut params, &mut rng, &format!("dec{j}"), spec, j)?);
        }

        let head = Conv2dLayer::new(
            &mut params,
            &mut rng,
            "head.conv",
            widths[0],
            config.classes,
            2,
            Conv2dConfig::same(),
        )?;

        let provider = match &config.aux {
            AuxSource::FrozenRandom => FrozenConvProvider::random(seed, &config.aux_stages())?,
            AuxSource::Checkpoint { path } => FrozenConvProvider::from_checkpoint(path, &config.aux_stages())?,
        };
        provider.register_frozen(&mut params, AUX_PREFIX)?;

        Ok((
            Segmenter {
                config: config.clone(),
                encoders,
                decoders,
                head,
            },
            params,
        ))
    }

    fn check_input(&self, x: &Var) -> Result<()> {
        let [_, c, h, w] = x.dims();
        let f = self.config.downsampling();
        if c != self.config.in_channels || h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "segmenter expects N×{}×H×W with H, W divisible by {f}; got {}",
                self.config.in_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Per-pixel logits, N×2×H×W.
    pub fn logits(&self, cx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        self.check_input(x)?;
        let aux = FrozenConvProvider::from_params(cx.params, AUX_PREFIX, &self.config.aux_stages())?;
        let mut h = x.clone();
        let mut indices = Vec::with_capacity(self.encoders.len());
        for enc in &self.encoders {
            let (y, idx) = enc.forward(cx, &h)?;
            h = y;
            indices.push(idx);
        }
        for dec in &self.decoders {
            let idx = indices.pop().expect("one index set per encoder");
            h = dec.forward(cx, &h, &idx, &aux)?;
        }
        self.head.forward(cx, &h)
    }

    /// Per-pixel class probabilities, N×2×H×W; channel 1 is the lesion.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let z = self.logits(cx, x)?;
        cx.g.softmax(&z)
    }

    pub fn predict(&self, params: &ModelParameters, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let mut cx = Ctx::new(&mut g, params, Mode::Eval);
        let x = cx.g.constant(input.clone());
        Ok(self.forward(&mut cx, &x)?.to_tensor())
    }

    pub fn param_count(&self) -> usize {
        self.encoders.iter().map(EncoderBlock::param_count).sum::<usize>()
            + self.decoders.iter().map(DecoderBlock::param_count).sum::<usize>()
            + self.head.param_count()
    }
}
