use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{confidence_interval, Z_95};
use crate::tensor::Tensor;

/// A score in [0, 1] and whether it came from the both-empty convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

impl Score {
    fn of(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn empty() -> Self {
        Self {
            value: 1.0,
            degenerate: true,
        }
    }
}

fn mask_plane(t: &Tensor) -> Result<(usize, usize, Vec<bool>)> {
    let [n, c, h, w] = t.dims();
    if n != 1 || c != 1 {
        return Err(Error::Shape(format!("mask must be 1×1×H×W, got {:?}", t.dims())));
    }
    Ok((h, w, t.data().iter().map(|&v| v > 0.5).collect()))
}

fn planes(pred: &Tensor, truth: &Tensor) -> Result<(usize, usize, Vec<bool>, Vec<bool>)> {
    if pred.dims() != truth.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let (h, w, a) = mask_plane(pred)?;
    let (_, _, b) = mask_plane(truth)?;
    Ok((h, w, a, b))
}

fn overlap(pred: &Tensor, truth: &Tensor) -> Result<(f64, f64, f64)> {
    let (_, _, a, b) = planes(pred, truth)?;
    let (mut inter, mut na, mut nb) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.iter().zip(&b) {
        inter += u64::from(x && y);
        na += u64::from(x);
        nb += u64::from(y);
    }
    Ok((inter as f64, na as f64, nb as f64))
}

/// |A∩B| / |A∪B| over values > 0.5.
pub fn iou(pred: &Tensor, truth: &Tensor) -> Result<Score> {
    let (i, a, b) = overlap(pred, truth)?;
    Ok(if a + b == 0.0 { Score::empty() } else { Score::of(i / (a + b - i)) })
}

/// 2|A∩B| / (|A| + |B|) over values > 0.5.
pub fn dice(pred: &Tensor, truth: &Tensor) -> Result<Score> {
    let (i, a, b) = overlap(pred, truth)?;
    Ok(if a + b == 0.0 { Score::empty() } else { Score::of(2.0 * i / (a + b)) })
}

pub const BF_TOLERANCE_FRACTION: f64 = 0.0075;

pub fn default_bf_tolerance(h: usize, w: usize) -> f64 {
    BF_TOLERANCE_FRACTION * ((h * h + w * w) as f64).sqrt()
}

/// Mask pixels with a 4-neighbour outside the mask; pixels beyond the image
/// count as outside.
pub fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let inside = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize]
    };
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if inside(y, x) && !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1)) {
                out[y as usize * w + x as usize] = true;
            }
        }
    }
    out
}

/// Fraction of `from` pixels within `tol` of some `to` pixel.
fn matched_fraction(from: &[bool], to: &[bool], h: usize, w: usize, tol: f64) -> f64 {
    let r = tol.floor() as isize;
    let tol2 = tol * tol;
    let (mut hit, mut total) = (0u64, 0u64);
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !from[y as usize * w + x as usize] {
                continue;
            }
            total += 1;
            let found = (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    yy >= 0
                        && xx >= 0
                        && (yy as usize) < h
                        && (xx as usize) < w
                        && ((dy * dy + dx * dx) as f64) <= tol2
                        && to[yy as usize * w + xx as usize]
                })
            });
            hit += u64::from(found);
        }
    }
    hit as f64 / total as f64
}

fn bf_planes(a: &[bool], b: &[bool], h: usize, w: usize, tol: f64) -> Score {
    let (ba, bb) = (boundary(a, h, w), boundary(b, h, w));
    let (ea, eb) = (!ba.contains(&true), !bb.contains(&true));
    match (ea, eb) {
        (true, true) => Score::empty(),
        (true, false) | (false, true) => Score::of(0.0),
        _ => {
            let p = matched_fraction(&ba, &bb, h, w, tol);
            let r = matched_fraction(&bb, &ba, h, w, tol);
            Score::of(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        }
    }
}

/// Boundary F-score; `tolerance` in pixels, defaulting to 0.75% of the
/// image diagonal.
pub fn bf_score(pred: &Tensor, truth: &Tensor, tolerance: Option<f64>) -> Result<Score> {
    let (h, w, a, b) = planes(pred, truth)?;
    let tol = tolerance.unwrap_or_else(|| default_bf_tolerance(h, w));
    if !(tol >= 0.0) {
        return Err(Error::Argument(format!("tolerance {tol} must be non-negative")));
    }
    Ok(bf_planes(&a, &b, h, w, tol))
}

/// Pixel tallies for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    /// Pixels of this class in the truth.
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }
}

/// Per-class results of one image; class 0 is background, 1 lesion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSegmentation {
    pub classes: Vec<ClassCounts>,
    pub bf: Vec<Score>,
}

/// Two-class tallies and boundary scores of one binary prediction.
pub fn segment_image(pred: &Tensor, truth: &Tensor, tolerance: Option<f64>) -> Result<ImageSegmentation> {
    let (h, w, a, b) = planes(pred, truth)?;
    let tol = tolerance.unwrap_or_else(|| default_bf_tolerance(h, w));
    let mut classes = vec![ClassCounts::default(); 2];
    for (&p, &t) in a.iter().zip(&b) {
        let (p, t) = (usize::from(p), usize::from(t));
        if p == t {
            classes[p].tp += 1;
        } else {
            classes[p].fp += 1;
            classes[t].fn_ += 1;
        }
    }
    let (na, nb): (Vec<bool>, Vec<bool>) = a.iter().zip(&b).map(|(&x, &y)| (!x, !y)).unzip();
    let bf = vec![bf_planes(&na, &nb, h, w, tol), bf_planes(&a, &b, h, w, tol)];
    Ok(ImageSegmentation { classes, bf })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub dice: f64,
    pub dice_standard_error: f64,
    pub accuracy: f64,
    pub iou: f64,
    pub bf_score: f64,
    /// Share of truth pixels belonging to this class.
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub images: usize,
    pub classes: Vec<ClassReport>,
    pub global_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iou: f64,
    pub weighted_iou: f64,
    pub mean_bf_score: f64,
    /// `class<k>.<metric>` entries that fell back to a convention.
    pub degenerate: Vec<String>,
}

/// Dataset-level report. Overlap scores pool pixel counts over images; the
/// boundary score averages per-image values. `frequencies` default to the
/// truth pixel shares.
pub fn aggregate_segmentation(images: &[ImageSegmentation], frequencies: Option<&[f64]>) -> Result<SegmentationReport> {
    let Some(first) = images.first() else {
        return Err(Error::Argument("no images to aggregate".into()));
    };
    let k = first.classes.len();
    if k == 0 || images.iter().any(|im| im.classes.len() != k || im.bf.len() != k) {
        return Err(Error::Argument("every image needs the same nonzero class count".into()));
    }
    let mut totals = vec![ClassCounts::default(); k];
    let mut bf_sum = vec![0.0; k];
    let mut bf_degenerate = vec![true; k];
    for im in images {
        for c in 0..k {
            totals[c].tp += im.classes[c].tp;
            totals[c].fp += im.classes[c].fp;
            totals[c].fn_ += im.classes[c].fn_;
            bf_sum[c] += im.bf[c].value;
            bf_degenerate[c] &= im.bf[c].degenerate;
        }
    }
    let pixels: u64 = totals.iter().map(ClassCounts::support).sum();
    let freq: Vec<f64> = match frequencies {
        Some(f) if f.len() == k => f.to_vec(),
        Some(f) => return Err(Error::Argument(format!("{} frequencies for {k} classes", f.len()))),
        None if pixels == 0 => vec![0.0; k],
        None => totals.iter().map(|t| t.support() as f64 / pixels as f64).collect(),
    };
    let mut degenerate = Vec::new();
    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        let t = totals[c];
        let (tp, fp, fn_) = (t.tp as f64, t.fp as f64, t.fn_ as f64);
        let (dice, iou) = if tp + fp + fn_ == 0.0 {
            degenerate.push(format!("class{c}.iou"));
            (1.0, 1.0)
        } else {
            (2.0 * tp / (2.0 * tp + fp + fn_), tp / (tp + fp + fn_))
        };
        let accuracy = if t.support() == 0 {
            degenerate.push(format!("class{c}.accuracy"));
            1.0
        } else {
            tp / (tp + fn_)
        };
        if bf_degenerate[c] {
            degenerate.push(format!("class{c}.bf_score"));
        }
        classes.push(ClassReport {
            dice,
            dice_standard_error: confidence_interval(1.0 - dice, images.len() as u64, Z_95)?,
            accuracy,
            iou,
            bf_score: bf_sum[c] / images.len() as f64,
            frequency: freq[c],
        });
    }
    let mean = |f: fn(&ClassReport) -> f64| classes.iter().map(f).sum::<f64>() / k as f64;
    let correct: u64 = totals.iter().map(|t| t.tp).sum();
    Ok(SegmentationReport {
        images: images.len(),
        global_accuracy: if pixels == 0 { 1.0 } else { correct as f64 / pixels as f64 },
        mean_accuracy: mean(|c| c.accuracy),
        mean_iou: mean(|c| c.iou),
        weighted_iou: classes.iter().map(|c| c.frequency * c.iou).sum(),
        mean_bf_score: mean(|c| c.bf_score),
        classes,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(size: usize, y0: usize, x0: usize, side: usize) -> Tensor {
        Tensor::from_fn([1, 1, size, size], |[_, _, y, x]| {
            f64::from(y >= y0 && y < y0 + side && x >= x0 && x < x0 + side)
        })
    }

    #[test]
    fn overlap_cases() {
        let a = square(8, 1, 1, 4);
        assert_eq!(iou(&a, &a).unwrap(), Score::of(1.0));
        assert_eq!(dice(&a, &square(8, 5, 5, 3)).unwrap().value, 0.0);
        let z = Tensor::zeros([1, 1, 8, 8]);
        assert!(dice(&z, &z).unwrap().degenerate);
        assert!(iou(&a, &Tensor::zeros([1, 1, 4, 4])).is_err());
    }

    #[test]
    fn boundary_of_square_is_its_ring() {
        let (h, w, m) = mask_plane(&square(6, 1, 1, 4)).unwrap();
        let b = boundary(&m, h, w);
        assert_eq!(b.iter().filter(|&&v| v).count(), 12);
        assert!(!b[2 * 6 + 2]);
    }

    #[test]
    fn bf_translation_by_one_pixel() {
        let a = square(32, 8, 8, 12);
        let b = square(32, 9, 8, 12);
        assert_eq!(bf_score(&a, &b, Some(1.0)).unwrap().value, 1.0);
        assert!(bf_score(&a, &b, Some(0.0)).unwrap().value < 1.0);
    }

    #[test]
    fn weighted_iou_arithmetic() {
        let im = ImageSegmentation {
            classes: vec![ClassCounts { tp: 9, fp: 0, fn_: 0 }, ClassCounts { tp: 1, fp: 1, fn_: 0 }],
            bf: vec![Score::of(1.0), Score::of(1.0)],
        };
        let r = aggregate_segmentation(&[im], Some(&[0.9, 0.1])).unwrap();
        assert!((r.mean_iou - 0.75).abs() < 1e-15);
        assert!((r.weighted_iou - 0.95).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_aggregates_to_one() {
        let a = square(16, 3, 3, 6);
        let im = segment_image(&a, &a, None).unwrap();
        let r = aggregate_segmentation(&[im.clone(), im], None).unwrap();
        for v in [r.global_accuracy, r.mean_accuracy, r.mean_iou, r.weighted_iou, r.mean_bf_score] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(r.classes[1].dice_standard_error, 0.0);
    }
}
