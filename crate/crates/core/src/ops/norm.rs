//! Per-channel batch normalization and inverted dropout.

use crate::error::{Error, Result};
use crate::tensor::{RngState, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the current batch in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Values kept from a training-mode forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    /// Normalized input `(x − μ)/σ`, pre-affine.
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance, used for the running estimate.
    pub batch_var_unbiased: Vec<f64>,
}

fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>, usize) {
    let [n, c, _, _] = x.dims();
    let m = n * x.shape().plane();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x.plane(b, ch).iter().sum::<f64>();
        }
        let mu = s / m as f64;
        let mut v = 0.0;
        for b in 0..n {
            v += x.plane(b, ch).iter().map(|&t| (t - mu) * (t - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m as f64;
    }
    (mean, var, m)
}

/// Training-mode normalization with batch statistics.
pub fn batch_norm_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<(Tensor, BatchNormCache)> {
    let [n, c, _, _] = x.dims();
    check_affine(c, gamma, beta)?;
    let (mean, var, m) = channel_stats(x);
    if m < 2 {
        return Err(Error::Argument(format!(
            "batch_norm in train mode needs at least 2 values per channel, got {m}"
        )));
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let plane = x.shape().plane();
    let mut normalized = x.clone();
    let mut out = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * plane;
            for i in o..o + plane {
                let z = (x.data()[i] - mean[ch]) * inv_std[ch];
                normalized.data_mut()[i] = z;
                out.data_mut()[i] = gamma[ch] * z + beta[ch];
            }
        }
    }
    let unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
    Ok((
        out,
        BatchNormCache {
            normalized,
            inv_std,
            batch_mean: mean,
            batch_var_unbiased: unbiased,
        },
    ))
}

/// `(dx, dgamma, dbeta)` for the training-mode normalization.
pub fn batch_norm_train_backward(
    grad_out: &Tensor,
    gamma: &[f64],
    cache: &BatchNormCache,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let [n, c, _, _] = grad_out.dims();
    let plane = grad_out.shape().plane();
    let m = (n * plane) as f64;
    let g = grad_out.data();
    let z = cache.normalized.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * plane;
            for i in o..o + plane {
                dgamma[ch] += g[i] * z[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![0.0; grad_out.len()];
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * plane;
            let k = gamma[ch] * cache.inv_std[ch] / m;
            for i in o..o + plane {
                dx[i] = k * (m * g[i] - dbeta[ch] - z[i] * dgamma[ch]);
            }
        }
    }
    (
        Tensor::new(grad_out.shape(), dx).expect("same shape"),
        dgamma,
        dbeta,
    )
}

/// Inference-mode normalization with fixed statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
) -> Result<Tensor> {
    let [n, c, _, _] = x.dims();
    check_affine(c, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::Shape(format!(
            "batch_norm: running statistics cover {} channels, input has {c}",
            mean.len()
        )));
    }
    let plane = x.shape().plane();
    let mut out = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + BN_EPSILON).sqrt();
            let o = (b * c + ch) * plane;
            for v in &mut out.data_mut()[o..o + plane] {
                *v = gamma[ch] * (*v - mean[ch]) * inv + beta[ch];
            }
        }
    }
    Ok(out)
}

fn check_affine(c: usize, gamma: &[f64], beta: &[f64]) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "batch_norm: affine parameters cover {} channels, input has {c}",
            gamma.len()
        )));
    }
    Ok(())
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Argument(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Keep-mask scaled by `1/(1 − rate)`; zero where dropped.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut RngState) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_output_is_standardized() {
        let mut rng = RngState::new(5);
        let x = Tensor::randn([3, 2, 4, 5], 3.0, &mut rng).map(|v| v + 7.0);
        let (y, _) = batch_norm_train(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y.plane(b, ch).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() <= 1e-9);
            // ε shrinks the variance slightly below one
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn single_value_per_channel_is_rejected() {
        let x = Tensor::zeros([1, 2, 1, 1]);
        assert!(batch_norm_train(&x, &[1.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn dropout_rate_bounds() {
        assert!(check_dropout_rate(0.0).is_ok());
        assert!(check_dropout_rate(0.99).is_ok());
        assert!(check_dropout_rate(1.0).is_err());
        assert!(check_dropout_rate(-0.1).is_err());
    }

    #[test]
    fn dropout_masks_are_seeded() {
        let a = dropout_mask(64, 0.5, &mut RngState::new(9));
        let b = dropout_mask(64, 0.5, &mut RngState::new(9));
        assert_eq!(a, b);
        assert!(a.iter().all(|&m| m == 0.0 || m == 2.0));
    }
}
