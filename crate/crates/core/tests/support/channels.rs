//! Channel bookkeeping of the default networks, read from forward traces.

use cbstm_core::autograd::{Graph, TraceEvent};
use cbstm_core::models::{Classifier, ClassifierConfig, Segmenter, SegmenterConfig};
use cbstm_core::nn::Ctx;
use cbstm_core::ops::Mode;
use cbstm_core::{Result, RngState, Tensor};

/// One traced point: label, expected channels, observed channels.
pub type ChannelCheck = (String, usize, Option<usize>);

fn observed(events: &[TraceEvent], label: &str) -> Option<usize> {
    events.iter().find(|e| e.label == label).map(|e| e.shape.c())
}

/// Traces the default classifier on a `side×side` input. Expected widths are
/// four concatenated branches before the squeeze and the stage output after.
pub fn classifier_channels(side: usize) -> Result<Vec<ChannelCheck>> {
    let config = ClassifierConfig::default();
    let (model, params) = Classifier::build(&config, 0)?;
    let mut g = Graph::inference();
    g.enable_trace();
    let mut cx = Ctx::new(&mut g, &params, Mode::Eval);
    let x = cx.g.constant(Tensor::full([1, 3, side, side], 0.5));
    let probs = model.forward(&mut cx, &x, &mut RngState::new(0))?;
    let mut out = vec![("probabilities".to_string(), 2, Some(probs.dims()[1]))];
    let events = g.trace_events();
    for (s, spec) in config.stages.iter().enumerate() {
        for (suffix, want) in [("boosted", 4 * spec.branch_width), ("out", spec.output_width)] {
            let label = format!("stm{s}.{suffix}");
            let got = observed(events, &label);
            out.push((label, want, got));
        }
    }
    Ok(out)
}

/// Traces the default segmenter on a `side×side` input. Decoder `j` (deepest
/// first) concatenates its upsampled input with half as many aux channels.
pub fn segmenter_channels(side: usize) -> Result<Vec<ChannelCheck>> {
    let config = SegmenterConfig::default();
    let widths = config.encoder_widths.clone();
    let (model, params) = Segmenter::build(&config, 0)?;
    let mut g = Graph::inference();
    g.enable_trace();
    let mut cx = Ctx::new(&mut g, &params, Mode::Eval);
    let x = cx.g.constant(Tensor::full([1, 3, side, side], 0.5));
    let probs = model.forward(&mut cx, &x)?;
    let mut out = vec![("probabilities".to_string(), 2, Some(probs.dims()[1]))];
    let events = g.trace_events();
    for (i, &w) in widths.iter().enumerate() {
        let label = format!("enc{i}.out");
        out.push((label.clone(), w, observed(events, &label)));
    }
    for j in 0..widths.len() {
        let din = widths[widths.len() - 1 - j];
        let dout = widths[(widths.len() - 1 - j).saturating_sub(1)];
        for (suffix, want) in [("boosted", din + din / 2), ("out", dout)] {
            let label = format!("dec{j}.{suffix}");
            let got = observed(events, &label);
            out.push((label, want, got));
        }
    }
    Ok(out)
}

pub fn all_match(checks: &[ChannelCheck]) -> bool {
    checks.iter().all(|(_, want, got)| Some(*want) == *got)
}
