//! Brute-force reference implementations and randomized comparisons against
//! the library kernels.

use cbstm_core::data::Label;
use cbstm_core::metrics::{self, ConfusionCounts};
use cbstm_core::ops::conv::{conv2d_forward, ConvPlan};
use cbstm_core::ops::dense::{cross_entropy_forward, softmax_forward};
use cbstm_core::ops::pool::{avg_pool2d_forward, max_pool2d_forward};
use cbstm_core::ops::{Conv2dConfig, Padding, PoolConfig, PoolPlan, Targets};
use cbstm_core::{Result, RngState, Tensor};

pub const ORACLE_TOL: f64 = 1e-12;
pub const INSTANCES: usize = 100;

pub struct OracleCase {
    pub name: &'static str,
    pub instances: usize,
    pub max_error: f64,
}

impl OracleCase {
    pub fn passed(&self) -> bool {
        self.instances >= INSTANCES && self.max_error <= ORACLE_TOL
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn worst(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "oracle length");
    a.iter().zip(b).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

/// `(before, output_len)` along one axis, or `None` for an invalid geometry.
fn geometry(input: usize, extent: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    let (before, padded) = match padding {
        Padding::Explicit(p) => (p, input + 2 * p),
        Padding::Same => {
            let out = (input + stride - 1) / stride;
            let need = (out - 1) * stride + extent;
            let total = need.saturating_sub(input);
            (total / 2, input + total)
        }
    };
    (padded >= extent).then(|| (before, (padded - extent) / stride + 1))
}

pub fn conv_oracle(x: &Tensor, k: &Tensor, bias: &[f64], cfg: Conv2dConfig) -> Option<Tensor> {
    let [n, cin, h, w] = x.dims();
    let [cout, _, kh, kw] = k.dims();
    let d = cfg.dilation;
    let (top, oh) = geometry(h, (kh - 1) * d + 1, cfg.stride, cfg.padding)?;
    let (left, ow) = geometry(w, (kw - 1) * d + 1, cfg.stride, cfg.padding)?;
    Some(Tensor::from_fn([n, cout, oh, ow], |[b, o, y, xx]| {
        let mut acc = bias[o];
        for c in 0..cin {
            for i in 0..kh {
                for j in 0..kw {
                    let iy = (y * cfg.stride + i * d) as isize - top as isize;
                    let ix = (xx * cfg.stride + j * d) as isize - left as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        acc += x.at(b, c, iy as usize, ix as usize) * k.at(o, c, i, j);
                    }
                }
            }
        }
        acc
    }))
}

/// Max pool (padding never wins, first maximum in scan order) with argmax
/// plane offsets, and zero-filled average pool.
pub fn pool_oracle(x: &Tensor, cfg: PoolConfig) -> Option<(Tensor, Vec<usize>, Tensor)> {
    let [n, c, h, w] = x.dims();
    let (top, oh) = geometry(h, cfg.window, cfg.stride, cfg.padding)?;
    let (left, ow) = geometry(w, cfg.window, cfg.stride, cfg.padding)?;
    let mut idx = Vec::new();
    let mut maxes = Vec::new();
    let mut avgs = Vec::new();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best: Option<(f64, usize)> = None;
                    let mut sum = 0.0;
                    for i in 0..cfg.window {
                        for j in 0..cfg.window {
                            let iy = (y * cfg.stride + i) as isize - top as isize;
                            let ix = (xx * cfg.stride + j) as isize - left as isize;
                            if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            let v = x.at(b, ch, iy, ix);
                            sum += v;
                            let off = iy * w + ix;
                            match best {
                                Some((bv, bo)) if v < bv || (v == bv && off > bo) => {}
                                _ => best = Some((v, off)),
                            }
                        }
                    }
                    let (bv, bo) = best?;
                    maxes.push(bv);
                    idx.push(bo);
                    avgs.push(sum / (cfg.window * cfg.window) as f64);
                }
            }
        }
    }
    let shape = [n, c, oh, ow];
    Some((Tensor::new(shape, maxes).ok()?, idx, Tensor::new(shape, avgs).ok()?))
}

pub fn softmax_oracle(logits: &Tensor) -> Tensor {
    let [_, c, _, _] = logits.dims();
    Tensor::from_fn(logits.dims(), |[b, ch, y, x]| {
        let denom: f64 = (0..c).map(|k| logits.at(b, k, y, x).exp()).sum();
        logits.at(b, ch, y, x).exp() / denom
    })
}

pub fn cross_entropy_oracle(probs: &Tensor, targets: &[usize], weights: Option<&[f64]>) -> f64 {
    let [n, _, h, w] = probs.dims();
    let mut terms = Vec::new();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let t = targets[(b * h + y) * w + x];
                let wt = weights.map_or(1.0, |ws| ws[t]);
                terms.push(-wt * probs.at(b, t, y, x).max(1e-12).ln());
            }
        }
    }
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Detection rates straight from their definitions.
pub struct RatesOracle {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f_score: f64,
    pub mcc: f64,
}

pub fn rates_oracle(c: &ConfusionCounts) -> RatesOracle {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    RatesOracle {
        accuracy: div(tp + tn, tp + tn + fp + fn_),
        precision,
        recall,
        specificity: div(tn, tn + fp),
        f_score: div(2.0 * precision * recall, precision + recall),
        mcc: div(tp * tn - fp * fn_, ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt()),
    }
}

pub fn confusion_oracle(probs: &[f64], labels: &[Label], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (p, l) in probs.iter().zip(labels) {
        match (*p >= threshold, *l == Label::Covid) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// `(iou, dice)` of two binary masks; two empty masks agree perfectly.
pub fn overlap_oracle(a: &[bool], b: &[bool]) -> (f64, f64) {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count() as f64;
    let total = (a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count()) as f64;
    if union == 0.0 {
        (1.0, 1.0)
    } else {
        (inter / union, 2.0 * inter / total)
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l == Label::Covid).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l == Label::Healthy).map(|(s, _)| *s).collect();
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Double-double arithmetic: an unevaluated sum `hi + lo`.
#[derive(Clone, Copy, Debug)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd {
        hi: s,
        lo: (a - (s - bb)) + (b - bb),
    }
}

fn quick(hi: f64, lo: f64) -> Dd {
    let s = hi + lo;
    Dd { hi: s, lo: lo - (s - hi) }
}

impl Dd {
    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        quick(s.hi, s.lo + self.lo + o.lo)
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul(Dd::from(q1)).neg());
        let q2 = r.hi / o.hi;
        let r = r.add(o.mul(Dd::from(q2)).neg());
        let q3 = r.hi / o.hi;
        quick(q1, q2).add(Dd::from(q3))
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::from(0.0);
        }
        let s = self.hi.sqrt();
        let sd = Dd::from(s);
        let r = self.add(sd.mul(sd).neg());
        sd.add(Dd::from(r.hi / (2.0 * s)))
    }
}

/// `z·sqrt(e(1−e)/n)` carried in double-double precision.
pub fn ci_oracle(error: f64, n: u64, z: f64) -> f64 {
    let e = Dd::from(error);
    let var = e.mul(Dd::from(1.0).add(e.neg())).div(Dd::from(n as f64));
    let r = Dd::from(z).mul(var.sqrt());
    r.hi + r.lo
}

fn random_config(rng: &mut RngState) -> Conv2dConfig {
    Conv2dConfig {
        stride: 1 + rng.below(2),
        dilation: 1 + rng.below(2),
        padding: if rng.bernoulli(0.5) {
            Padding::Same
        } else {
            Padding::Explicit(rng.below(3))
        },
    }
}

fn conv_case(seed: u64) -> Result<OracleCase> {
    let mut rng = RngState::derive(seed, &[0xc0]);
    let mut max_error: f64 = 0.0;
    let mut instances = 0;
    let mut dilated = 0;
    while instances < INSTANCES || dilated < INSTANCES / 4 {
        let mut cfg = random_config(&mut rng);
        if instances % 3 == 0 {
            cfg.dilation = 2;
        }
        let ks = [1, 3, 5][rng.below(3)];
        let x = Tensor::randn([1 + rng.below(2), 1 + rng.below(3), 3 + rng.below(7), 3 + rng.below(7)], 1.0, &mut rng);
        let k = Tensor::randn([1 + rng.below(3), x.dims()[1], ks, ks], 1.0, &mut rng);
        let bias: Vec<f64> = (0..k.dims()[0]).map(|_| rng.normal()).collect();
        let expected = conv_oracle(&x, &k, &bias, cfg);
        let plan = ConvPlan::new(x.shape(), k.shape(), cfg);
        match (expected, plan) {
            (Some(e), Ok(plan)) => {
                let got = conv2d_forward(&x, &k, &bias, &plan);
                assert_eq!(got.dims(), e.dims(), "conv shape for {cfg:?}");
                max_error = max_error.max(worst(got.data(), e.data()));
                instances += 1;
                if cfg.dilation == 2 {
                    dilated += 1;
                }
            }
            (None, Err(_)) => {}
            (e, p) => panic!("geometry disagreement for {cfg:?}: oracle {} vs plan {}", e.is_some(), p.is_ok()),
        }
    }
    Ok(OracleCase {
        name: "conv2d (incl. dilation 2)",
        instances,
        max_error,
    })
}

fn pool_case(seed: u64) -> Result<OracleCase> {
    let mut rng = RngState::derive(seed, &[0x900]);
    let mut max_error: f64 = 0.0;
    let mut instances = 0;
    while instances < INSTANCES {
        let window = 2 + rng.below(2);
        let padding = if rng.bernoulli(0.5) {
            Padding::Same
        } else {
            Padding::Explicit(rng.below(2))
        };
        let cfg = PoolConfig::new(window, 1 + rng.below(2), padding);
        // Coarse values so ties occur and the tie rule is exercised.
        let x = Tensor::from_fn([1 + rng.below(2), 1 + rng.below(2), 2 + rng.below(7), 2 + rng.below(7)], |_| {
            (rng.below(5) as f64 - 2.0) * 0.5
        });
        let (Some((mx, idx, avg)), Ok(plan)) = (pool_oracle(&x, cfg), PoolPlan::new(x.shape(), cfg)) else {
            continue;
        };
        let (got, got_idx) = max_pool2d_forward(&x, &plan);
        assert_eq!(got_idx.as_slice(), idx.as_slice(), "pool argmax for {cfg:?}");
        max_error = max_error.max(worst(got.data(), mx.data()));
        max_error = max_error.max(worst(avg_pool2d_forward(&x, &plan).data(), avg.data()));
        instances += 1;
    }
    Ok(OracleCase {
        name: "max/avg pool with indices",
        instances,
        max_error,
    })
}

fn dense_cases(seed: u64) -> Result<Vec<OracleCase>> {
    let mut rng = RngState::derive(seed, &[0xde5]);
    let (mut sm, mut ce) = (0.0f64, 0.0f64);
    for _ in 0..INSTANCES {
        let [n, c, h, w] = [1 + rng.below(3), 2 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)];
        let logits = Tensor::randn([n, c, h, w], 2.0, &mut rng);
        let probs = softmax_forward(&logits);
        sm = sm.max(worst(probs.data(), softmax_oracle(&logits).data()));
        let t: Vec<usize> = (0..n * h * w).map(|_| rng.below(c)).collect();
        let weights: Vec<f64> = (0..c).map(|_| rng.uniform(0.1, 3.0)).collect();
        let targets = Targets::new(n, h, w, t.clone())?;
        let wopt = rng.bernoulli(0.5).then_some(weights.as_slice());
        ce = ce.max(rel(
            cross_entropy_forward(&probs, &targets, wopt)?,
            cross_entropy_oracle(&probs, &t, wopt),
        ));
    }
    Ok(vec![
        OracleCase {
            name: "softmax",
            instances: INSTANCES,
            max_error: sm,
        },
        OracleCase {
            name: "cross-entropy",
            instances: INSTANCES,
            max_error: ce,
        },
    ])
}

fn random_labels(n: usize, rng: &mut RngState) -> Vec<Label> {
    (0..n).map(|_| if rng.bernoulli(0.5) { Label::Covid } else { Label::Healthy }).collect()
}

fn detection_case(seed: u64) -> Result<OracleCase> {
    let mut rng = RngState::derive(seed, &[0xd37]);
    let mut max_error: f64 = 0.0;
    for _ in 0..INSTANCES {
        let n = 1 + rng.below(60);
        let labels = random_labels(n, &mut rng);
        let probs: Vec<f64> = (0..n).map(|_| (rng.below(11) as f64) / 10.0).collect();
        let threshold = [0.3, 0.5, 0.7][rng.below(3)];
        let c = metrics::confusion_from_predictions(&probs, &labels, threshold)?;
        assert_eq!(c, confusion_oracle(&probs, &labels, threshold));
        let got = metrics::detection_metrics(&c)?;
        let want = rates_oracle(&c);
        for (a, b) in [
            (got.accuracy, want.accuracy),
            (got.precision, want.precision),
            (got.recall, want.recall),
            (got.specificity, want.specificity),
            (got.f_score, want.f_score),
            (got.mcc, want.mcc),
        ] {
            max_error = max_error.max(rel(a, b));
        }
        if labels.contains(&Label::Covid) && labels.contains(&Label::Healthy) {
            let (_, auc) = metrics::roc_curve(&probs, &labels)?;
            max_error = max_error.max(rel(auc, mann_whitney_auc(&probs, &labels)));
        }
    }
    Ok(OracleCase {
        name: "detection metrics",
        instances: INSTANCES,
        max_error,
    })
}

pub fn random_mask(h: usize, w: usize, density: f64, rng: &mut RngState) -> Vec<bool> {
    (0..h * w).map(|_| rng.bernoulli(density)).collect()
}

pub fn mask_tensor(m: &[bool], h: usize, w: usize) -> Tensor {
    Tensor::new([1, 1, h, w], m.iter().map(|&b| f64::from(u8::from(b))).collect()).expect("mask size")
}

fn overlap_case(seed: u64) -> Result<OracleCase> {
    let mut rng = RngState::derive(seed, &[0x10]);
    let mut max_error: f64 = 0.0;
    for i in 0..INSTANCES {
        let (h, w) = (1 + rng.below(12), 1 + rng.below(12));
        let density = if i % 10 == 0 { 0.0 } else { rng.uniform(0.0, 1.0) };
        let (a, b) = (random_mask(h, w, density, &mut rng), random_mask(h, w, rng.uniform(0.0, 1.0), &mut rng));
        let (ta, tb) = (mask_tensor(&a, h, w), mask_tensor(&b, h, w));
        let (iou, dice) = overlap_oracle(&a, &b);
        max_error = max_error.max(rel(metrics::iou(&ta, &tb)?.value, iou));
        max_error = max_error.max(rel(metrics::dice(&ta, &tb)?.value, dice));
    }
    Ok(OracleCase {
        name: "iou/dice",
        instances: INSTANCES,
        max_error,
    })
}

fn ci_case(seed: u64) -> Result<OracleCase> {
    let mut rng = RngState::derive(seed, &[0xc1]);
    let mut max_error: f64 = 0.0;
    for _ in 0..INSTANCES {
        let e = rng.uniform_inclusive(0.0, 1.0);
        let n = 1 + rng.below(100_000) as u64;
        max_error = max_error.max(rel(metrics::confidence_interval(e, n, metrics::Z_95)?, ci_oracle(e, n, metrics::Z_95)));
    }
    Ok(OracleCase {
        name: "confidence interval",
        instances: INSTANCES,
        max_error,
    })
}

/// Every oracle comparison at `seed`.
pub fn oracle_cases(seed: u64) -> Result<Vec<OracleCase>> {
    let mut out = vec![conv_case(seed)?, pool_case(seed)?];
    out.extend(dense_cases(seed)?);
    out.push(detection_case(seed)?);
    out.push(overlap_case(seed)?);
    out.push(ci_case(seed)?);
    Ok(out)
}
