use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// x = false-positive rate, y = true-positive rate.
    Roc,
    /// x = recall, y = precision.
    Pr,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Scores `≥ threshold` count as positive; the first point uses +∞.
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// `threshold,x,y` rows under a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,x,y\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.x, p.y));
        }
        out
    }
}

/// Cumulative `(threshold, tp, fp)` after admitting each distinct score,
/// highest first.
fn sweep(scores: &[f64], labels: &[Label]) -> Result<(Vec<(f64, u64, u64)>, u64, u64)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Argument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Argument("scores must be finite".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let positives = labels.iter().filter(|&&l| l == Label::Covid).count() as u64;
    let negatives = labels.len() as u64 - positives;
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == Label::Covid {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((t, tp, fp));
    }
    Ok((steps, positives, negatives))
}

/// ROC curve from (0, 0) to (1, 1) over distinct scores, with the
/// trapezoidal area.
pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<(Curve, f64)> {
    let (steps, pos, neg) = sweep(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("ROC needs both classes present".into()));
    }
    let (p, n) = (pos as f64, neg as f64);
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let mut auc = 0.0;
    for (t, tp, fp) in steps {
        let prev = *points.last().expect("starts nonempty");
        let pt = CurvePoint {
            threshold: t,
            x: fp as f64 / n,
            y: tp as f64 / p,
        };
        auc += (pt.x - prev.x) * (pt.y + prev.y) / 2.0;
        points.push(pt);
    }
    Ok((
        Curve {
            kind: CurveKind::Roc,
            points,
        },
        auc,
    ))
}

/// Precision–recall curve over distinct scores, starting at recall 0 with
/// precision 1. The area sums recall increments times the precision
/// envelope (the best precision at any equal or higher recall).
pub fn pr_curve(scores: &[f64], labels: &[Label]) -> Result<(Curve, f64)> {
    let (steps, pos, _) = sweep(scores, labels)?;
    if pos == 0 {
        return Err(Error::Argument("precision-recall needs at least one positive".into()));
    }
    let p = pos as f64;
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 1.0,
    }];
    for (t, tp, fp) in steps {
        points.push(CurvePoint {
            threshold: t,
            x: tp as f64 / p,
            y: tp as f64 / (tp + fp) as f64,
        });
    }
    let mut envelope = vec![0.0; points.len()];
    let mut best: f64 = 0.0;
    for i in (0..points.len()).rev() {
        best = best.max(points[i].y);
        envelope[i] = best;
    }
    let auc = (1..points.len())
        .map(|i| (points[i].x - points[i - 1].x) * envelope[i])
        .sum();
    Ok((
        Curve {
            kind: CurveKind::Pr,
            points,
        },
        auc,
    ))
}
