use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AuxStage, StmStageSpec};
use crate::ops::DEFAULT_DROPOUT;

/// Where a model's frozen auxiliary channels come from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum AuxSource {
    /// He-normal weights drawn from the model seed.
    #[default]
    FrozenRandom,
    /// `aux.*` tensors of an existing checkpoint.
    Checkpoint { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Nominal `[H, W]` of training images.
    pub input_size: [usize; 2],
    pub in_channels: usize,
    pub stem_width: usize,
    pub stages: Vec<StmStageSpec>,
    pub dropout: f64,
    pub classes: usize,
    pub aux: AuxSource,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            input_size: [304, 304],
            in_channels: 3,
            stem_width: 32,
            stages: vec![
                StmStageSpec::new(32, 128),
                StmStageSpec::new(128, 256),
                StmStageSpec::new(256, 512),
            ],
            dropout: DEFAULT_DROPOUT,
            classes: 2,
            aux: AuxSource::FrozenRandom,
        }
    }
}

pub const CLASSIFIER_STAGES: usize = 3;

impl ClassifierConfig {
    /// Same topology with every width divided by `factor` (minimum 1); the
    /// desk-scale variant used by tests.
    pub fn reduced(factor: usize) -> Self {
        let d = |w: usize| (w / factor).max(1);
        let mut c = ClassifierConfig::default();
        c.stem_width = d(c.stem_width);
        for s in &mut c.stages {
            s.branch_width = d(s.branch_width);
            s.output_width = d(s.output_width);
        }
        c.input_size = [64, 64];
        c
    }

    pub fn downsampling(&self) -> usize {
        1 << self.stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != CLASSIFIER_STAGES {
            return Err(Error::Config(format!(
                "classifier needs exactly {CLASSIFIER_STAGES} STM stages, got {}",
                self.stages.len()
            )));
        }
        for s in &self.stages {
            s.validate()?;
        }
        if self.classes < 2 {
            return Err(Error::Config("class count must be ≥ 2".into()));
        }
        if self.in_channels == 0 || self.stem_width == 0 {
            return Err(Error::Config("input and stem widths must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        check_divisible(self.input_size, self.downsampling())
    }

    /// Input channel count of each STM stage.
    pub fn stage_inputs(&self) -> Vec<usize> {
        let mut cin = self.stem_width;
        self.stages
            .iter()
            .map(|s| {
                let c = cin;
                cin = s.output_width;
                c
            })
            .collect()
    }

    /// Provider stages: D and E of STM stage `s` are stages `2s` and `2s + 1`.
    pub fn aux_stages(&self) -> Vec<AuxStage> {
        self.stages
            .iter()
            .zip(self.stage_inputs())
            .flat_map(|(s, cin)| s.aux_stages(cin))
            .collect()
    }

    pub fn feature_width(&self) -> usize {
        self.stages.last().map_or(self.stem_width, |s| s.output_width)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub input_size: [usize; 2],
    pub in_channels: usize,
    pub encoder_widths: Vec<usize>,
    /// Convs per encoder block and refinement convs per decoder block.
    pub convs_per_block: usize,
    /// Aux channels per decoder stage, deepest first; `None` means half the
    /// stage width.
    pub aux_channels: Option<Vec<usize>>,
    pub classes: usize,
    pub aux: AuxSource,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            input_size: [304, 304],
            in_channels: 3,
            encoder_widths: vec![32, 64, 128, 256],
            convs_per_block: 2,
            aux_channels: None,
            classes: 2,
            aux: AuxSource::FrozenRandom,
        }
    }
}

impl SegmenterConfig {
    pub fn reduced(widths: &[usize]) -> Self {
        SegmenterConfig {
            input_size: [32, 32],
            encoder_widths: widths.to_vec(),
            ..SegmenterConfig::default()
        }
    }

    pub fn downsampling(&self) -> usize {
        1 << self.encoder_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() || self.encoder_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("encoder widths must be nonempty and ≥ 1".into()));
        }
        if self.encoder_widths.len() > 16 {
            return Err(Error::Config("at most 16 encoder stages".into()));
        }
        if self.classes != 2 {
            return Err(Error::Config(format!(
                "segmenter separates lesion from background; class count must be 2, got {}",
                self.classes
            )));
        }
        if self.in_channels == 0 || self.convs_per_block == 0 {
            return Err(Error::Config("input channels and convs per block must be ≥ 1".into()));
        }
        if let Some(a) = &self.aux_channels {
            if a.len() != self.encoder_widths.len() || a.iter().any(|&w| w == 0) {
                return Err(Error::Config(format!(
                    "need one positive aux width per decoder stage ({}), got {a:?}",
                    self.encoder_widths.len()
                )));
            }
        }
        check_divisible(self.input_size, self.downsampling())
    }

    /// Aux width of each decoder stage in execution order (deepest first).
    pub fn decoder_aux(&self) -> Vec<usize> {
        match &self.aux_channels {
            Some(a) => a.clone(),
            None => self.encoder_widths.iter().rev().map(|&w| (w / 2).max(1)).collect(),
        }
    }

    /// `(in, out)` channels of each decoder stage, deepest first.
    pub fn decoder_plan(&self) -> Vec<(usize, usize)> {
        let w = &self.encoder_widths;
        (0..w.len()).rev().map(|i| (w[i], w[i.saturating_sub(1)])).collect()
    }

    pub fn aux_stages(&self) -> Vec<AuxStage> {
        self.decoder_plan()
            .iter()
            .zip(self.decoder_aux())
            .map(|(&(cin, _), width)| AuxStage {
                in_channels: cin,
                width,
                dilation: 1,
            })
            .collect()
    }
}

fn check_divisible(size: [usize; 2], factor: usize) -> Result<()> {
    if size[0] == 0 || size[1] == 0 || size[0] % factor != 0 || size[1] % factor != 0 {
        return Err(Error::Config(format!(
            "input size {}×{} must be positive and divisible by {factor}",
            size[0], size[1]
        )));
    }
    Ok(())
}

/// Checkpoint config echo; the tag tells loaders what to rebuild.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Classifier(ClassifierConfig),
    Segmenter(SegmenterConfig),
    Provider { stages: Vec<AuxStage> },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Classifier(_) => "classifier",
            ModelConfig::Segmenter(_) => "segmenter",
            ModelConfig::Provider { .. } => "provider",
        }
    }
}
