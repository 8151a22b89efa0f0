//! Channel-axis operations: softmax, cross-entropy, global pooling, the
//! fully connected head and concatenation.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const LOG_CLAMP: f64 = 1e-12;

/// Softmax over the channel axis at every `(n, y, x)` location.
pub fn softmax_forward(logits: &Tensor) -> Tensor {
    let [n, c, _, _] = logits.dims();
    let plane = logits.shape().plane();
    let x = logits.data();
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (b * c + ch) * plane + p;
            let max = (0..c).map(|ch| x[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for ch in 0..c {
                let e = (x[at(ch)] - max).exp();
                out[at(ch)] = e;
                denom += e;
            }
            for ch in 0..c {
                out[at(ch)] /= denom;
            }
        }
    }
    Tensor::new(logits.shape(), out).expect("same shape")
}

/// Vector–Jacobian product of softmax given its output `probs`.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Tensor {
    let [n, c, _, _] = probs.dims();
    let plane = probs.shape().plane();
    let (p, g) = (probs.data(), grad_out.data());
    let mut dx = vec![0.0; p.len()];
    for b in 0..n {
        for q in 0..plane {
            let at = |ch: usize| (b * c + ch) * plane + q;
            let dot: f64 = (0..c).map(|ch| p[at(ch)] * g[at(ch)]).sum();
            for ch in 0..c {
                dx[at(ch)] = p[at(ch)] * (g[at(ch)] - dot);
            }
        }
    }
    Tensor::new(probs.shape(), dx).expect("same shape")
}

/// Integer class targets for every `(n, y, x)` location of a prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Targets {
    shape: [usize; 3],
    classes: Vec<usize>,
}

impl Targets {
    pub fn new(n: usize, h: usize, w: usize, classes: Vec<usize>) -> Result<Self> {
        if classes.len() != n * h * w {
            return Err(Error::Shape(format!(
                "{} targets for a {n}×{h}×{w} map",
                classes.len()
            )));
        }
        Ok(Targets {
            shape: [n, h, w],
            classes,
        })
    }

    /// One label per batch item (image-level classification).
    pub fn labels(classes: Vec<usize>) -> Self {
        Targets {
            shape: [classes.len(), 1, 1],
            classes,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.shape
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub(crate) fn check_against(&self, probs: Shape, weights: Option<&[f64]>) -> Result<()> {
        let [n, c, h, w] = probs.0;
        if self.shape != [n, h, w] {
            return Err(Error::Shape(format!(
                "targets {:?} do not cover predictions {probs}",
                self.shape
            )));
        }
        if let Some(&bad) = self.classes.iter().find(|&&t| t >= c) {
            return Err(Error::Argument(format!("target class {bad} outside [0, {c})")));
        }
        if let Some(ws) = weights {
            if ws.len() != c {
                return Err(Error::Argument(format!(
                    "{} class weights for {c} classes",
                    ws.len()
                )));
            }
        }
        Ok(())
    }
}

/// Mean of `−weight[t]·ln(max(p_t, 1e−12))` over every location.
pub fn cross_entropy_forward(probs: &Tensor, targets: &Targets, weights: Option<&[f64]>) -> Result<f64> {
    targets.check_against(probs.shape(), weights)?;
    let [n, c, h, w] = probs.dims();
    let plane = h * w;
    let mut total = 0.0;
    for b in 0..n {
        for q in 0..plane {
            let t = targets.classes[b * plane + q];
            let p = probs.data()[(b * c + t) * plane + q];
            let wt = weights.map_or(1.0, |ws| ws[t]);
            total -= wt * p.max(LOG_CLAMP).ln();
        }
    }
    Ok(total / (n * plane) as f64)
}

/// Gradient of the cross-entropy with respect to the probabilities.
pub fn cross_entropy_grad_probs(probs: &Tensor, targets: &Targets, weights: Option<&[f64]>) -> Tensor {
    let [n, c, h, w] = probs.dims();
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut d = Tensor::zeros(probs.shape());
    for b in 0..n {
        for q in 0..plane {
            let t = targets.classes[b * plane + q];
            let i = (b * c + t) * plane + q;
            let p = probs.data()[i];
            if p > LOG_CLAMP {
                d.data_mut()[i] = -weights.map_or(1.0, |ws| ws[t]) / (p * m);
            }
        }
    }
    d
}

/// Gradient of `cross_entropy(softmax(z))` with respect to the logits `z`:
/// `weight[t]·(p − onehot(t))/M`.
pub fn cross_entropy_grad_logits(probs: &Tensor, targets: &Targets, weights: Option<&[f64]>) -> Tensor {
    let [n, c, h, w] = probs.dims();
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut d = probs.clone();
    for b in 0..n {
        for q in 0..plane {
            let t = targets.classes[b * plane + q];
            let wt = weights.map_or(1.0, |ws| ws[t]);
            for ch in 0..c {
                let i = (b * c + ch) * plane + q;
                let onehot = if ch == t { 1.0 } else { 0.0 };
                d.data_mut()[i] = wt * (probs.data()[i] - onehot) / m;
            }
        }
    }
    d
}

pub fn global_avg_pool_forward(x: &Tensor) -> Tensor {
    let [n, c, _, _] = x.dims();
    let plane = x.shape().plane() as f64;
    let mut out = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            out.push(x.plane(b, ch).iter().sum::<f64>() / plane);
        }
    }
    Tensor::new(Shape::new(n, c, 1, 1), out).expect("sized above")
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input: Shape) -> Tensor {
    let plane = input.plane();
    let k = 1.0 / plane as f64;
    let mut dx = Vec::with_capacity(input.numel());
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g * k, plane));
    }
    Tensor::new(input, dx).expect("sized by input")
}

pub(crate) fn check_fully_connected(x: Shape, weights: Shape, bias_len: usize) -> Result<Shape> {
    let [n, c, h, w] = x.0;
    let [co, ci, kh, kw] = weights.0;
    if h != 1 || w != 1 {
        return Err(Error::Shape(format!(
            "fully_connected expects a 1×1 spatial input, got {x}"
        )));
    }
    if ci != c || kh != 1 || kw != 1 {
        return Err(Error::Shape(format!(
            "fully_connected weights {weights} do not accept {c} input features"
        )));
    }
    if bias_len != co {
        return Err(Error::Shape(format!(
            "fully_connected bias has {bias_len} entries for {co} outputs"
        )));
    }
    Ok(Shape::new(n, co, 1, 1))
}

/// `y[n] = W·x[n] + b` with weights stored as a `C_out×C_in×1×1` tensor.
pub fn fully_connected_forward(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Tensor {
    let [n, c, _, _] = x.dims();
    let co = weights.dims()[0];
    let wd = weights.data();
    let mut out = Vec::with_capacity(n * co);
    for b in 0..n {
        let xb = &x.data()[b * c..][..c];
        for o in 0..co {
            let row = &wd[o * c..][..c];
            out.push(bias[o] + row.iter().zip(xb).map(|(a, v)| a * v).sum::<f64>());
        }
    }
    Tensor::new(Shape::new(n, co, 1, 1), out).expect("sized above")
}

pub fn fully_connected_backward(x: &Tensor, weights: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
    let [n, c, _, _] = x.dims();
    let co = weights.dims()[0];
    let (wd, g) = (weights.data(), grad_out.data());
    let mut dx = vec![0.0; n * c];
    let mut dw = vec![0.0; co * c];
    let mut db = vec![0.0; co];
    for b in 0..n {
        let xb = &x.data()[b * c..][..c];
        for o in 0..co {
            let gv = g[b * co + o];
            db[o] += gv;
            for i in 0..c {
                dx[b * c + i] += wd[o * c + i] * gv;
                dw[o * c + i] += gv * xb[i];
            }
        }
    }
    (
        Tensor::new(x.shape(), dx).expect("same shape"),
        Tensor::new(weights.shape(), dw).expect("same shape"),
        db,
    )
}

/// Concatenates along the channel axis, preserving part order.
pub fn concat_channels_forward(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Argument("concat_channels needs at least one part".into()))?;
    let [n, _, h, w] = first.dims();
    let mut c_total = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.dims();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat_channels: part {} does not share batch/spatial dims with {}",
                p.shape(),
                first.shape()
            )));
        }
        c_total += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * c_total * plane);
    for b in 0..n {
        for p in parts {
            let pc = p.dims()[1];
            data.extend_from_slice(&p.data()[b * pc * plane..][..pc * plane]);
        }
    }
    Tensor::new(Shape::new(n, c_total, h, w), data)
}
