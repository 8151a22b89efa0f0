//! Finite-difference checks over every differentiable op and both reduced
//! networks.

use cbstm_core::autograd::gradcheck::{check_parameters, finite_difference_check_at, DEFAULT_STEP};
use cbstm_core::autograd::{finite_difference_check, GradCheckReport, Graph, RunningStats, Var};
use cbstm_core::models::{ClassifierConfig, Model, ModelConfig, SegmenterConfig};
use cbstm_core::nn::{Ctx, ModelParameters};
use cbstm_core::ops::{Conv2dConfig, Mode, Padding, PoolConfig, Targets};
use cbstm_core::{Result, RngState, Shape, Tensor};

pub const SMOOTH_TOL: f64 = 1e-6;
pub const KINK_TOL: f64 = 1e-5;

pub struct GradCase {
    pub name: String,
    pub report: GradCheckReport,
    /// Piecewise-linear path checked with kink exclusion.
    pub kinked: bool,
}

impl GradCase {
    pub fn tolerance(&self) -> f64 {
        if self.kinked {
            KINK_TOL
        } else {
            SMOOTH_TOL
        }
    }

    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_error <= self.tolerance()
    }
}

/// `Σ y·r` for a fixed random `r`, so every output element matters.
fn project(g: &mut Graph, y: &Var, seed: u64) -> Result<Var> {
    let r = Tensor::randn(y.shape(), 1.0, &mut RngState::derive(seed, &[0x9e0]));
    let r = g.constant(r);
    let p = g.mul(y, &r)?;
    g.sum(&p)
}

fn randn(shape: [usize; 4], rng: &mut RngState) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn case<F>(out: &mut Vec<GradCase>, name: &str, kinked: bool, point: &Tensor, f: F) -> Result<()>
where
    F: Fn(&mut Graph, &Var) -> Result<Var>,
{
    let report = finite_difference_check(f, point, DEFAULT_STEP)?;
    out.push(GradCase {
        name: name.to_string(),
        report,
        kinked,
    });
    Ok(())
}

/// One check per op and argument at `seed`.
pub fn op_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut rng = RngState::derive(seed, &[0x6ad]);
    let mut out = Vec::new();
    let s = seed;

    let x = randn([2, 2, 6, 5], &mut rng);
    let k = randn([3, 2, 3, 3], &mut rng).scale(0.5);
    let b = randn([1, 1, 1, 3], &mut rng);
    let convs = [
        ("same", Conv2dConfig::same()),
        ("dilation2", Conv2dConfig::dilated(2)),
        (
            "stride2_pad1",
            Conv2dConfig {
                stride: 2,
                dilation: 1,
                padding: Padding::Explicit(1),
            },
        ),
    ];
    for (tag, cfg) in convs {
        case(&mut out, &format!("conv2d[{tag}].input"), false, &x, |g, v| {
            let (kk, bb) = (g.constant(k.clone()), g.constant(b.clone()));
            let y = g.conv2d(v, &kk, &bb, cfg)?;
            project(g, &y, s)
        })?;
        case(&mut out, &format!("conv2d[{tag}].kernel"), false, &k, |g, v| {
            let (xx, bb) = (g.constant(x.clone()), g.constant(b.clone()));
            let y = g.conv2d(&xx, v, &bb, cfg)?;
            project(g, &y, s)
        })?;
        case(&mut out, &format!("conv2d[{tag}].bias"), false, &b, |g, v| {
            let (xx, kk) = (g.constant(x.clone()), g.constant(k.clone()));
            let y = g.conv2d(&xx, &kk, v, cfg)?;
            project(g, &y, s)
        })?;
    }

    let px = randn([1, 2, 5, 5], &mut rng);
    for (tag, cfg) in [
        ("3x3s1", PoolConfig::smoothing(3)),
        ("2x2s2", PoolConfig::downsample(2)),
    ] {
        case(&mut out, &format!("avg_pool2d[{tag}]"), false, &px, |g, v| {
            let y = g.avg_pool2d(v, cfg)?;
            project(g, &y, s)
        })?;
        case(&mut out, &format!("max_pool2d[{tag}]"), true, &px, |g, v| {
            let (y, _) = g.max_pool2d(v, cfg)?;
            project(g, &y, s)
        })?;
    }

    let ux = randn([1, 2, 4, 4], &mut rng);
    let (_, indices) = {
        let mut g = Graph::inference();
        let c = g.constant(ux);
        g.max_pool2d(&c, PoolConfig::downsample(2))?
    };
    let small = randn([1, 2, 2, 2], &mut rng);
    case(&mut out, "max_unpool2d", false, &small, |g, v| {
        let y = g.max_unpool2d(v, &indices, Shape::new(1, 2, 4, 4))?;
        project(g, &y, s)
    })?;
    case(&mut out, "upsample_nearest", false, &small, |g, v| {
        let y = g.upsample_nearest(v, 2)?;
        project(g, &y, s)
    })?;
    let other = randn([1, 3, 2, 2], &mut rng);
    case(&mut out, "concat_channels", false, &small, |g, v| {
        let o = g.constant(other.clone());
        let y = g.concat_channels(&[&o, v, &o])?;
        project(g, &y, s)
    })?;
    case(&mut out, "narrow_channels", false, &other, |g, v| {
        let y = g.narrow_channels(v, 1, 2)?;
        project(g, &y, s)
    })?;
    case(&mut out, "crop", false, &px, |g, v| {
        let y = g.crop(v, 4, 3)?;
        project(g, &y, s)
    })?;
    case(&mut out, "relu", true, &px, |g, v| {
        let y = g.relu(v)?;
        project(g, &y, s)
    })?;

    let bx = randn([3, 2, 3, 3], &mut rng);
    let gamma = randn([1, 1, 1, 2], &mut rng);
    let beta = randn([1, 1, 1, 2], &mut rng);
    let (rm, rv) = ([0.3, -0.2], [1.5, 0.7]);
    for mode in [Mode::Train, Mode::Eval] {
        let bn = |g: &mut Graph, x: &Var, ga: &Var, be: &Var| -> Result<Var> {
            let (y, _) = g.batch_norm(x, ga, be, RunningStats { mean: &rm, var: &rv }, mode)?;
            project(g, &y, s)
        };
        case(&mut out, &format!("batch_norm[{mode:?}].input"), false, &bx, |g, v| {
            let (ga, be) = (g.constant(gamma.clone()), g.constant(beta.clone()));
            bn(g, v, &ga, &be)
        })?;
        case(&mut out, &format!("batch_norm[{mode:?}].gamma"), false, &gamma, |g, v| {
            let (xx, be) = (g.constant(bx.clone()), g.constant(beta.clone()));
            bn(g, &xx, v, &be)
        })?;
        case(&mut out, &format!("batch_norm[{mode:?}].beta"), false, &beta, |g, v| {
            let (xx, ga) = (g.constant(bx.clone()), g.constant(gamma.clone()));
            bn(g, &xx, &ga, v)
        })?;
    }

    case(&mut out, "dropout[train]", false, &px, |g, v| {
        let y = g.dropout(v, 0.5, &mut RngState::new(s), Mode::Train)?;
        project(g, &y, s)
    })?;
    case(&mut out, "global_avg_pool", false, &px, |g, v| {
        let y = g.global_avg_pool(v)?;
        project(g, &y, s)
    })?;
    let fx = randn([2, 4, 1, 1], &mut rng);
    let fw = randn([3, 4, 1, 1], &mut rng);
    let fb = randn([1, 1, 1, 3], &mut rng);
    case(&mut out, "fully_connected.input", false, &fx, |g, v| {
        let (w, bb) = (g.constant(fw.clone()), g.constant(fb.clone()));
        let y = g.fully_connected(v, &w, &bb)?;
        project(g, &y, s)
    })?;
    case(&mut out, "fully_connected.weights", false, &fw, |g, v| {
        let (xx, bb) = (g.constant(fx.clone()), g.constant(fb.clone()));
        let y = g.fully_connected(&xx, v, &bb)?;
        project(g, &y, s)
    })?;
    case(&mut out, "fully_connected.bias", false, &fb, |g, v| {
        let (xx, w) = (g.constant(fx.clone()), g.constant(fw.clone()));
        let y = g.fully_connected(&xx, &w, v)?;
        project(g, &y, s)
    })?;

    let logits = randn([2, 3, 2, 2], &mut rng);
    let targets = Targets::new(2, 2, 2, (0..8).map(|i| (i * 7 + seed as usize) % 3).collect())?;
    let weights = [0.5, 1.0, 2.0];
    case(&mut out, "softmax", false, &logits, |g, v| {
        let y = g.softmax(v)?;
        project(g, &y, s)
    })?;
    case(&mut out, "softmax+cross_entropy", false, &logits, |g, v| {
        let p = g.softmax(v)?;
        g.cross_entropy(&p, &targets, Some(&weights))
    })?;
    let probs = cbstm_core::ops::dense::softmax_forward(&logits);
    case(&mut out, "cross_entropy.probs", false, &probs, |g, v| g.cross_entropy(v, &targets, None))?;

    let a = randn([1, 2, 3, 3], &mut rng);
    case(&mut out, "add", false, &a, |g, v| {
        let c = g.constant(a.map(f64::sin));
        let y = g.add(v, &c)?;
        let y = g.mul(&y, &y)?;
        project(g, &y, s)
    })?;
    case(&mut out, "mul", false, &a, |g, v| {
        let c = g.constant(a.map(|t| t + 0.5));
        let y = g.mul(v, &c)?;
        let y = g.mul(&y, v)?;
        project(g, &y, s)
    })?;
    case(&mut out, "scale+square", false, &a, |g, v| {
        let y = g.scale(v, -1.7)?;
        let y = g.square(&y)?;
        project(g, &y, s)
    })?;
    case(&mut out, "mean", false, &a, |g, v| {
        let y = g.square(v)?;
        g.mean(&y)
    })?;
    Ok(out)
}

fn small_classifier() -> ModelConfig {
    let mut c = ClassifierConfig::reduced(8);
    c.input_size = [32, 32];
    ModelConfig::Classifier(c)
}

fn small_segmenter() -> ModelConfig {
    ModelConfig::Segmenter(SegmenterConfig::reduced(&[8, 16, 32]))
}

/// Reduced networks at 1×3×32×32: every trainable tensor at a few random
/// entries plus a sample of input pixels, in training mode.
pub fn model_cases(seed: u64, per_tensor: usize, input_coords: usize) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for (tag, config) in [("classifier", small_classifier()), ("segmenter", small_segmenter())] {
        let (model, params) = Model::build(&config, seed)?;
        let mut rng = RngState::derive(seed, &[0x3c4]);
        let x = Tensor::rand_uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng);
        let targets = match &model {
            Model::Classifier(_) => Targets::labels(vec![(seed % 2) as usize]),
            Model::Segmenter(_) => Targets::new(1, 32, 32, (0..32 * 32).map(|_| rng.below(2)).collect())?,
        };
        let loss = |g: &mut Graph, p: &ModelParameters, xv: Option<&Var>| -> Result<Var> {
            let mut cx = Ctx::new(g, p, Mode::Train);
            let xv = match xv {
                Some(v) => v.clone(),
                None => cx.g.constant(x.clone()),
            };
            let probs = model.forward(&mut cx, &xv, &mut RngState::new(seed))?;
            cx.g.cross_entropy(&probs, &targets, None)
        };

        let mut coords = Vec::new();
        for (name, p) in params.iter() {
            if !p.is_trainable() {
                continue;
            }
            for _ in 0..per_tensor.min(p.value().len()) {
                coords.push((name.to_string(), rng.below(p.value().len())));
            }
        }
        let report = check_parameters(|g, p| loss(g, p, None), &params, &coords, DEFAULT_STEP)?;
        out.push(GradCase {
            name: format!("{tag}.parameters"),
            report,
            kinked: true,
        });

        let pixels: Vec<usize> = (0..input_coords).map(|_| rng.below(x.len())).collect();
        let report = finite_difference_check_at(|g, v| loss(g, &params, Some(v)), &x, DEFAULT_STEP, &pixels)?;
        out.push(GradCase {
            name: format!("{tag}.input"),
            report,
            kinked: true,
        });
    }
    Ok(out)
}
