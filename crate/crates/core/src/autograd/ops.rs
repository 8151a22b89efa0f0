//! Differentiable operations recorded on a [`Graph`].

use std::sync::Arc;

use crate::autograd::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::{conv, dense, norm, pool};
use crate::ops::{Conv2dConfig, ConvPlan, Mode, PoolConfig, PoolIndices, PoolPlan, Targets};
use crate::tensor::{RngState, Shape, Tensor};

fn finite(vars: &[&Var], what: &str) -> Result<()> {
    for v in vars {
        v.value().check_finite(what)?;
    }
    Ok(())
}

/// Running statistics handed to [`Graph::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub struct RunningStats<'a> {
    pub mean: &'a [f64],
    pub var: &'a [f64],
}

/// Updated running statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct UpdatedStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Graph {
    /// 2-D convolution. `kernel` is `C_out×C_in×kh×kw`; `bias` holds `C_out`
    /// values in any 4-D layout.
    pub fn conv2d(&mut self, x: &Var, kernel: &Var, bias: &Var, cfg: Conv2dConfig) -> Result<Var> {
        finite(&[x, kernel, bias], "conv2d")?;
        let plan = ConvPlan::new(x.shape(), kernel.shape(), cfg)?;
        if bias.value().len() != plan.kernel.n() {
            return Err(Error::Shape(format!(
                "conv2d: {} bias values for {} output channels",
                bias.value().len(),
                plan.kernel.n()
            )));
        }
        let y = conv::conv2d_forward(x.value(), kernel.value(), bias.value().data(), &plan);
        let (xa, ka, bshape) = (x.arc(), kernel.arc(), bias.shape());
        Ok(self.record(y, &[x, kernel, bias], move |g| {
            let (dx, dk, db) = conv::conv2d_backward(&xa, &ka, g, &plan);
            vec![Some(dx), Some(dk), Some(Tensor::new(bshape, db).expect("bias shape"))]
        }))
    }

    /// Max pooling; returns the pooled tensor and its argmax indices.
    pub fn max_pool2d(&mut self, x: &Var, cfg: PoolConfig) -> Result<(Var, PoolIndices)> {
        finite(&[x], "max_pool2d")?;
        let plan = PoolPlan::new(x.shape(), cfg)?;
        let (y, idx) = pool::max_pool2d_forward(x.value(), &plan);
        self.note_kinks(idx.as_slice().iter().copied());
        let saved = idx.clone();
        let v = self.record(y, &[x], move |g| vec![Some(pool::max_pool2d_backward(g, &saved))]);
        Ok((v, idx))
    }

    pub fn avg_pool2d(&mut self, x: &Var, cfg: PoolConfig) -> Result<Var> {
        finite(&[x], "avg_pool2d")?;
        let plan = PoolPlan::new(x.shape(), cfg)?;
        let y = pool::avg_pool2d_forward(x.value(), &plan);
        Ok(self.record(y, &[x], move |g| vec![Some(pool::avg_pool2d_backward(g, &plan))]))
    }

    pub fn max_unpool2d(&mut self, x: &Var, indices: &PoolIndices, output: Shape) -> Result<Var> {
        finite(&[x], "max_unpool2d")?;
        let y = pool::max_unpool2d_forward(x.value(), indices, output)?;
        let saved = indices.clone();
        Ok(self.record(y, &[x], move |g| vec![Some(pool::max_unpool2d_backward(g, &saved))]))
    }

    pub fn upsample_nearest(&mut self, x: &Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Argument("upsample factor must be ≥ 1".into()));
        }
        finite(&[x], "upsample_nearest")?;
        let y = pool::upsample_nearest_forward(x.value(), factor);
        let shape = x.shape();
        Ok(self.record(y, &[x], move |g| {
            vec![Some(pool::upsample_nearest_backward(g, shape, factor))]
        }))
    }

    pub fn concat_channels(&mut self, parts: &[&Var]) -> Result<Var> {
        finite(parts, "concat_channels")?;
        let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        let y = dense::concat_channels_forward(&values)?;
        let widths: Vec<usize> = parts.iter().map(|p| p.dims()[1]).collect();
        Ok(self.record(y, parts, move |g| {
            let mut start = 0;
            widths
                .iter()
                .map(|&w| {
                    let part = g.narrow_channels(start, w).expect("in range");
                    start += w;
                    Some(part)
                })
                .collect()
        }))
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let y = x.value().narrow_channels(start, len)?;
        let shape = x.shape();
        Ok(self.record(y, &[x], move |g| {
            let mut d = Tensor::zeros(shape);
            let [n, c, h, w] = shape.0;
            let plane = h * w;
            for b in 0..n {
                let src = &g.data()[b * len * plane..][..len * plane];
                d.data_mut()[(b * c + start) * plane..][..len * plane].copy_from_slice(src);
            }
            vec![Some(d)]
        }))
    }

    pub fn relu(&mut self, x: &Var) -> Result<Var> {
        finite(&[x], "relu")?;
        self.note_kinks(x.value().data().iter().map(|&v| v > 0.0));
        let y = crate::ops::relu(x.value());
        let xa = x.arc();
        Ok(self.record(y, &[x], move |g| {
            vec![Some(g.zip_map(&xa, |gv, xv| if xv > 0.0 { gv } else { 0.0 }).expect("same shape"))]
        }))
    }

    /// Batch normalization. In training mode the batch statistics are used and
    /// the updated running statistics are returned; in eval mode `running` is
    /// used as-is.
    pub fn batch_norm(
        &mut self,
        x: &Var,
        gamma: &Var,
        beta: &Var,
        running: RunningStats<'_>,
        mode: Mode,
    ) -> Result<(Var, Option<UpdatedStats>)> {
        finite(&[x, gamma, beta], "batch_norm")?;
        let c = x.dims()[1];
        match mode {
            Mode::Train => {
                let (y, cache) = norm::batch_norm_train(x.value(), gamma.value().data(), beta.value().data())?;
                if running.mean.len() != c || running.var.len() != c {
                    return Err(Error::Shape(format!(
                        "batch_norm: running statistics cover {} channels, input has {c}",
                        running.mean.len()
                    )));
                }
                let m = norm::BN_MOMENTUM;
                let updated = UpdatedStats {
                    mean: running
                        .mean
                        .iter()
                        .zip(&cache.batch_mean)
                        .map(|(r, b)| (1.0 - m) * r + m * b)
                        .collect(),
                    var: running
                        .var
                        .iter()
                        .zip(&cache.batch_var_unbiased)
                        .map(|(r, b)| (1.0 - m) * r + m * b)
                        .collect(),
                };
                let (ga, gshape, bshape) = (gamma.arc(), gamma.shape(), beta.shape());
                let v = self.record(y, &[x, gamma, beta], move |g| {
                    let (dx, dg, db) = norm::batch_norm_train_backward(g, ga.data(), &cache);
                    vec![
                        Some(dx),
                        Some(Tensor::new(gshape, dg).expect("gamma shape")),
                        Some(Tensor::new(bshape, db).expect("beta shape")),
                    ]
                });
                Ok((v, Some(updated)))
            }
            Mode::Eval => {
                let y = norm::batch_norm_eval(
                    x.value(),
                    gamma.value().data(),
                    beta.value().data(),
                    running.mean,
                    running.var,
                )?;
                let inv: Vec<f64> = running
                    .var
                    .iter()
                    .map(|v| 1.0 / (v + norm::BN_EPSILON).sqrt())
                    .collect();
                let mean = running.mean.to_vec();
                let (xa, ga, gshape, bshape) = (x.arc(), gamma.arc(), gamma.shape(), beta.shape());
                let v = self.record(y, &[x, gamma, beta], move |g| {
                    let [n, c, _, _] = g.dims();
                    let plane = g.shape().plane();
                    let mut dx = g.clone();
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for b in 0..n {
                        for ch in 0..c {
                            let o = (b * c + ch) * plane;
                            for i in o..o + plane {
                                let gv = g.data()[i];
                                dg[ch] += gv * (xa.data()[i] - mean[ch]) * inv[ch];
                                db[ch] += gv;
                                dx.data_mut()[i] = gv * ga.data()[ch] * inv[ch];
                            }
                        }
                    }
                    vec![
                        Some(dx),
                        Some(Tensor::new(gshape, dg).expect("gamma shape")),
                        Some(Tensor::new(bshape, db).expect("beta shape")),
                    ]
                });
                Ok((v, None))
            }
        }
    }

    /// Inverted dropout; identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: &Var, rate: f64, rng: &mut RngState, mode: Mode) -> Result<Var> {
        norm::check_dropout_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x.clone());
        }
        finite(&[x], "dropout")?;
        let mask = Arc::new(norm::dropout_mask(x.value().len(), rate, rng));
        let shape = x.shape();
        let y = Tensor::new(
            shape,
            x.value().data().iter().zip(mask.iter()).map(|(v, m)| v * m).collect(),
        )?;
        Ok(self.record(y, &[x], move |g| {
            let d = g.data().iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
            vec![Some(Tensor::new(shape, d).expect("same shape"))]
        }))
    }

    pub fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        finite(&[x], "global_avg_pool")?;
        let y = dense::global_avg_pool_forward(x.value());
        let shape = x.shape();
        Ok(self.record(y, &[x], move |g| {
            vec![Some(dense::global_avg_pool_backward(g, shape))]
        }))
    }

    /// `weights` is `C_out×C_in×1×1`; `x` must be spatially `1×1`.
    pub fn fully_connected(&mut self, x: &Var, weights: &Var, bias: &Var) -> Result<Var> {
        finite(&[x, weights, bias], "fully_connected")?;
        dense::check_fully_connected(x.shape(), weights.shape(), bias.value().len())?;
        let y = dense::fully_connected_forward(x.value(), weights.value(), bias.value().data());
        let (xa, wa, bshape) = (x.arc(), weights.arc(), bias.shape());
        Ok(self.record(y, &[x, weights, bias], move |g| {
            let (dx, dw, db) = dense::fully_connected_backward(&xa, &wa, g);
            vec![Some(dx), Some(dw), Some(Tensor::new(bshape, db).expect("bias shape"))]
        }))
    }

    /// Softmax over channels.
    pub fn softmax(&mut self, logits: &Var) -> Result<Var> {
        finite(&[logits], "softmax")?;
        if logits.dims()[1] == 0 {
            return Err(Error::Shape("softmax over zero channels".into()));
        }
        let y = dense::softmax_forward(logits.value());
        let saved = Arc::new(y.clone());
        let v = self.record(y, &[logits], move |g| vec![Some(dense::softmax_backward(&saved, g))]);
        self.mark_softmax(&v, logits);
        Ok(v)
    }

    /// Mean weighted cross-entropy of softmax probabilities against integer
    /// targets. When `probs` came from [`Graph::softmax`] the gradient is taken
    /// directly with respect to the logits.
    pub fn cross_entropy(&mut self, probs: &Var, targets: &Targets, weights: Option<&[f64]>) -> Result<Var> {
        finite(&[probs], "cross_entropy")?;
        let loss = dense::cross_entropy_forward(probs.value(), targets, weights)?;
        let (pa, t, w) = (probs.arc(), targets.clone(), weights.map(<[f64]>::to_vec));
        match self.softmax_source(probs) {
            Some(logits) => Ok(self.record(Tensor::scalar(loss), &[&logits], move |g| {
                let d = dense::cross_entropy_grad_logits(&pa, &t, w.as_deref());
                vec![Some(d.scale(g.data()[0]))]
            })),
            None => Ok(self.record(Tensor::scalar(loss), &[probs], move |g| {
                let d = dense::cross_entropy_grad_probs(&pa, &t, w.as_deref());
                vec![Some(d.scale(g.data()[0]))]
            })),
        }
    }

    /// Top-left `h×w` window of every plane.
    pub fn crop(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        let [n, c, xh, xw] = x.dims();
        if h > xh || w > xw {
            return Err(Error::Shape(format!("cannot crop {} to {h}×{w}", x.shape())));
        }
        if (h, w) == (xh, xw) {
            return Ok(x.clone());
        }
        let src = x.value();
        let y = Tensor::from_fn([n, c, h, w], |[b, ch, yy, xx]| src.at(b, ch, yy, xx));
        let shape = x.shape();
        Ok(self.record(y, &[x], move |g| {
            let mut d = Tensor::zeros(shape);
            for b in 0..n {
                for ch in 0..c {
                    for yy in 0..h {
                        for xx in 0..w {
                            d.set(b, ch, yy, xx, g.at(b, ch, yy, xx));
                        }
                    }
                }
            }
            vec![Some(d)]
        }))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: &Var) -> Result<Var> {
        let shape = x.shape();
        Ok(self.record(Tensor::scalar(x.value().sum()), &[x], move |g| {
            vec![Some(Tensor::full(shape, g.data()[0]))]
        }))
    }

    pub fn mean(&mut self, x: &Var) -> Result<Var> {
        let shape = x.shape();
        let k = 1.0 / shape.numel() as f64;
        Ok(self.record(Tensor::scalar(x.value().sum() * k), &[x], move |g| {
            vec![Some(Tensor::full(shape, g.data()[0] * k))]
        }))
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = a.value().zip_map(b.value(), |p, q| p + q)?;
        Ok(self.record(y, &[a, b], |g| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = a.value().zip_map(b.value(), |p, q| p * q)?;
        let (aa, ba) = (a.arc(), b.arc());
        Ok(self.record(y, &[a, b], move |g| {
            vec![
                Some(g.zip_map(&ba, |gv, bv| gv * bv).expect("same shape")),
                Some(g.zip_map(&aa, |gv, av| gv * av).expect("same shape")),
            ]
        }))
    }

    pub fn scale(&mut self, x: &Var, k: f64) -> Result<Var> {
        Ok(self.record(x.value().scale(k), &[x], move |g| vec![Some(g.scale(k))]))
    }

    pub fn square(&mut self, x: &Var) -> Result<Var> {
        let xa = x.arc();
        Ok(self.record(x.value().map(|v| v * v), &[x], move |g| {
            vec![Some(g.zip_map(&xa, |gv, xv| 2.0 * gv * xv).expect("same shape"))]
        }))
    }
}
