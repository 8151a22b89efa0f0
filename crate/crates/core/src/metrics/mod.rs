//! Detection and segmentation scores, curves, confidence intervals and PCA.

mod curves;
mod pca;
mod segmentation;

use serde::{Deserialize, Serialize};

pub use curves::{pr_curve, roc_curve, Curve, CurveKind, CurvePoint};
pub use pca::{pca_project, PcaProjection, PCA_MAX_ITERATIONS, PCA_TOLERANCE};
pub use segmentation::{
    aggregate_segmentation, bf_score, boundary, default_bf_tolerance, dice, iou, segment_image, ClassCounts,
    ClassReport, ImageSegmentation, Score, SegmentationReport, BF_TOLERANCE_FRACTION,
};

use crate::data::Label;
use crate::error::{Error, Result};

/// Binary confusion counts with COVID as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_scores(probabilities: &[f64], labels: &[Label]) -> Result<()> {
    if probabilities.is_empty() {
        return Err(Error::Argument("no predictions".into()));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Predicted COVID iff `p ≥ threshold`.
pub fn confusion_from_predictions(probabilities: &[f64], labels: &[Label], threshold: f64) -> Result<ConfusionCounts> {
    check_scores(probabilities, labels)?;
    let mut c = ConfusionCounts::default();
    for (&p, &l) in probabilities.iter().zip(labels) {
        match (p >= threshold, l == Label::Covid) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub confusion: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f_score: f64,
    pub mcc: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    /// Metrics whose denominator was zero; they are reported as 0.
    pub degenerate: Vec<String>,
}

/// Ratio, or 0 with `name` recorded when the denominator is zero.
fn ratio(num: f64, den: f64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

/// Threshold metrics of one confusion table; curve fields are left empty.
pub fn detection_metrics(c: &ConfusionCounts) -> Result<DetectionReport> {
    if c.total() == 0 {
        return Err(Error::Argument("confusion table is empty".into()));
    }
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let mut deg = Vec::new();
    let accuracy = (tp + tn) / (tp + tn + fp + fn_);
    let precision = ratio(tp, tp + fp, "precision", &mut deg);
    let recall = ratio(tp, tp + fn_, "recall", &mut deg);
    let specificity = ratio(tn, tn + fp, "specificity", &mut deg);
    let f_score = ratio(2.0 * precision * recall, precision + recall, "f_score", &mut deg);
    let mcc = ratio(
        tp * tn - fp * fn_,
        ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt(),
        "mcc",
        &mut deg,
    );
    Ok(DetectionReport {
        confusion: *c,
        accuracy,
        precision,
        recall,
        specificity,
        f_score,
        mcc,
        roc_auc: None,
        pr_auc: None,
        degenerate: deg,
    })
}

/// Threshold metrics plus ROC/PR areas where defined.
pub fn detection_report(probabilities: &[f64], labels: &[Label], threshold: f64) -> Result<DetectionReport> {
    let c = confusion_from_predictions(probabilities, labels, threshold)?;
    let mut r = detection_metrics(&c)?;
    match roc_curve(probabilities, labels) {
        Ok((_, auc)) => r.roc_auc = Some(auc),
        Err(_) => r.degenerate.push("roc_auc".into()),
    }
    match pr_curve(probabilities, labels) {
        Ok((_, auc)) => r.pr_auc = Some(auc),
        Err(_) => r.degenerate.push("pr_auc".into()),
    }
    Ok(r)
}

pub const Z_95: f64 = 1.96;

/// Half-width `z·√(e(1−e)/n)` of a normal-approximation interval on an
/// error rate.
pub fn confidence_interval(error: f64, n: u64, z: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&error) || n == 0 {
        return Err(Error::Argument(format!(
            "confidence interval needs error in [0, 1] and n ≥ 1, got ({error}, {n})"
        )));
    }
    Ok(z * (error * (1.0 - error) / n as f64).sqrt())
}
