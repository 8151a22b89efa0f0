use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cbstm_core::data::io::{read_image, write_mask};
use cbstm_core::data::{resize_bilinear, resize_nearest, Label};
use cbstm_core::metrics::DEFAULT_THRESHOLD;
use cbstm_core::models::{load_checkpoint, Model};
use cbstm_core::Tensor;

use crate::common::{make_dir, write_json, Failure};
use crate::eval::{binarize, label_name};

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// PNG or PGM slice.
    #[arg(long)]
    image: PathBuf,
    /// Detection checkpoint.
    #[arg(long)]
    detect_ckpt: PathBuf,
    /// Segmentation checkpoint, used only on a COVID verdict.
    #[arg(long)]
    seg_ckpt: PathBuf,
    /// Directory for verdict.json and, on a COVID verdict, mask.png.
    #[arg(long)]
    out: PathBuf,
    /// COVID probability at or above which the verdict is COVID.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Serialize)]
struct Verdict {
    label: &'static str,
    probability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_path: Option<PathBuf>,
}

fn fit(image: &Tensor, [h, w]: [usize; 2]) -> Result<Tensor, Failure> {
    if image.shape().h() == h && image.shape().w() == w {
        Ok(image.clone())
    } else {
        Ok(resize_bilinear(image, h, w)?)
    }
}

pub fn run(args: &PredictArgs) -> Result<(), Failure> {
    let image = read_image(&args.image)?;
    let detector = load_checkpoint(&args.detect_ckpt)?;
    let segmenter = load_checkpoint(&args.seg_ckpt)?;
    let Model::Classifier(det) = &detector.model else {
        return Err(Failure::usage(format!("{} is not a detection checkpoint", args.detect_ckpt.display())));
    };
    let Model::Segmenter(seg) = &segmenter.model else {
        return Err(Failure::usage(format!("{} is not a segmentation checkpoint", args.seg_ckpt.display())));
    };
    let probs = det.predict(&detector.params, &fit(&image, det.config.input_size)?)?;
    let probability = probs.data()[Label::Covid.index()];
    let label = if probability >= args.threshold { Label::Covid } else { Label::Healthy };
    make_dir(&args.out)?;
    let mask_path = if label == Label::Covid {
        let maps = seg.predict(&segmenter.params, &fit(&image, seg.config.input_size)?)?;
        let lesion = binarize(&maps.narrow_channels(Label::Covid.index(), 1)?);
        let mask = resize_nearest(&lesion, image.shape().h(), image.shape().w())?;
        let path = args.out.join("mask.png");
        write_mask(&path, &mask)?;
        Some(path)
    } else {
        None
    };
    let verdict = Verdict {
        label: label_name(label),
        probability,
        mask_path,
    };
    write_json(&args.out.join("verdict.json"), &verdict)?;
    println!("{}", serde_json::to_string(&verdict)?);
    Ok(())
}
