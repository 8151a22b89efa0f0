use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RngState;

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

/// Eigenvalues below this share of the total variance end the extraction.
const RANK_CUTOFF: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Unit eigenvectors, largest eigenvalue first.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_percent: Vec<f64>,
    /// One row per sample, one column per component.
    pub coordinates: Vec<Vec<f64>>,
    /// Set when fewer than the requested components carry variance.
    pub rank_deficient: bool,
}

impl PcaProjection {
    /// `index,pc1,...` rows; `labels` adds a label column when given.
    pub fn to_csv(&self, labels: Option<&[String]>) -> String {
        let k = self.components.len();
        let mut out = String::from("index");
        if labels.is_some() {
            out.push_str(",label");
        }
        for c in 1..=k {
            out.push_str(&format!(",pc{c}"));
        }
        out.push('\n');
        for (i, row) in self.coordinates.iter().enumerate() {
            out.push_str(&i.to_string());
            if let Some(l) = labels {
                out.push(',');
                out.push_str(l.get(i).map_or("", String::as_str));
            }
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let d = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
    }
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// Top-`k` principal components by power iteration on the sample
/// covariance, deflating after each component.
pub fn pca_project(features: &[Vec<f64>], k: usize) -> Result<PcaProjection> {
    let n = features.len();
    let d = features.first().map_or(0, Vec::len);
    if k == 0 || n < k + 1 || d < k {
        return Err(Error::Argument(format!(
            "PCA with k={k} needs at least {} samples of length ≥ {k}, got {n} of length {d}",
            k + 1
        )));
    }
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Argument("feature vectors differ in length".into()));
    }
    let mut mean = vec![0.0; d];
    for f in features {
        mean.iter_mut().zip(f).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut cov = vec![0.0; d * d];
    for row in &centered {
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i * d + j] += ri * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let mut rng = RngState::derive(0, &[0x9ca]);
    let mut components: Vec<Vec<f64>> = Vec::new();
    let mut eigenvalues = Vec::new();
    for _ in 0..k {
        if total <= 0.0 {
            break;
        }
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        for _ in 0..PCA_MAX_ITERATIONS {
            let mut next = mat_vec(&cov, &v);
            orthogonalize(&mut next, &components);
            if normalize(&mut next) == 0.0 {
                break;
            }
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let flipped = next.iter().zip(&v).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            v = next;
            if delta.min(flipped) < PCA_TOLERANCE {
                break;
            }
        }
        let lambda = dot(&v, &mat_vec(&cov, &v));
        if lambda <= RANK_CUTOFF * total {
            break;
        }
        let lead = v.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        eigenvalues.push(lambda);
    }
    let explained_variance_percent = eigenvalues.iter().map(|l| 100.0 * l / total).collect();
    let coordinates = centered
        .iter()
        .map(|row| components.iter().map(|c| dot(row, c)).collect())
        .collect();
    Ok(PcaProjection {
        mean,
        rank_deficient: components.len() < k,
        components,
        eigenvalues,
        explained_variance_percent,
        coordinates,
    })
}
