//! Square-window max/average pooling and the index-based inverse of max
//! pooling.

use crate::error::{Error, Result};
use crate::ops::conv::{axis_geometry, Padding, Pads};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolConfig {
    pub window: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl PoolConfig {
    pub fn new(window: usize, stride: usize, padding: Padding) -> Self {
        PoolConfig {
            window,
            stride,
            padding,
        }
    }

    /// Stride-1, size-preserving pooling used for in-block smoothing.
    pub fn smoothing(window: usize) -> Self {
        Self::new(window, 1, Padding::Same)
    }

    /// `window×window` downsampling with stride `window`; odd extents are
    /// padded on the bottom/right.
    pub fn downsample(window: usize) -> Self {
        Self::new(window, window, Padding::Same)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PoolPlan {
    pub input: Shape,
    pub output: Shape,
    pub pads: Pads,
    pub window: usize,
    pub stride: usize,
}

impl PoolPlan {
    pub fn new(input: Shape, cfg: PoolConfig) -> Result<Self> {
        if cfg.window == 0 || cfg.stride == 0 {
            return Err(Error::Argument("pool: window and stride must be ≥ 1".into()));
        }
        if let Padding::Explicit(p) = cfg.padding {
            if p >= cfg.window {
                return Err(Error::Geometry(format!(
                    "pool: padding {p} must be smaller than window {}",
                    cfg.window
                )));
            }
        }
        let [n, c, h, w] = input.0;
        let (top, bottom, oh) = axis_geometry(h, cfg.window, cfg.stride, cfg.padding)?;
        let (left, right, ow) = axis_geometry(w, cfg.window, cfg.stride, cfg.padding)?;
        Ok(PoolPlan {
            input,
            output: Shape::new(n, c, oh, ow),
            pads: Pads {
                top,
                bottom,
                left,
                right,
            },
            window: cfg.window,
            stride: cfg.stride,
        })
    }

    /// In-bounds input rows (or columns) covered by output position `o`.
    #[inline]
    fn span(&self, o: usize, pad: usize, len: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.window as isize).min(len as isize)).max(0) as usize;
        (lo, hi)
    }
}

/// Argmax positions recorded by [`max_pool2d_forward`]: for every pooled
/// element, the flat `y·W + x` offset of the winning input pixel within its
/// `(n, c)` plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input: Shape,
    output: Shape,
    indices: Vec<usize>,
}

impl PoolIndices {
    pub fn new(input: Shape, output: Shape, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != output.numel() {
            return Err(Error::Corruption(format!(
                "{} indices for pooled shape {output}",
                indices.len()
            )));
        }
        let plane = input.plane();
        if let Some(bad) = indices.iter().find(|&&i| i >= plane) {
            return Err(Error::Corruption(format!(
                "index {bad} outside a {}×{} plane",
                input.h(),
                input.w()
            )));
        }
        Ok(PoolIndices {
            input,
            output,
            indices,
        })
    }

    /// Shape of the tensor that was pooled.
    pub fn input_shape(&self) -> Shape {
        self.input
    }

    /// Shape of the pooled tensor.
    pub fn output_shape(&self) -> Shape {
        self.output
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }
}

/// Max pooling. Padded positions never win; ties go to the lowest flat index.
pub fn max_pool2d_forward(input: &Tensor, plan: &PoolPlan) -> (Tensor, PoolIndices) {
    let [n, c, h, w] = plan.input.0;
    let [_, _, oh, ow] = plan.output.0;
    let x = input.data();
    let mut out = Vec::with_capacity(plan.output.numel());
    let mut idx = Vec::with_capacity(plan.output.numel());
    for p in 0..n * c {
        let xin = &x[p * h * w..][..h * w];
        for oy in 0..oh {
            let (y0, y1) = plan.span(oy, plan.pads.top, h);
            for ox in 0..ow {
                let (x0, x1) = plan.span(ox, plan.pads.left, w);
                let mut best = f64::NEG_INFINITY;
                let mut arg = usize::MAX;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        let v = xin[y * w + xx];
                        if arg == usize::MAX || v > best {
                            best = v;
                            arg = y * w + xx;
                        }
                    }
                }
                out.push(best);
                idx.push(arg);
            }
        }
    }
    (
        Tensor::new(plan.output, out).expect("sized by plan"),
        PoolIndices {
            input: plan.input,
            output: plan.output,
            indices: idx,
        },
    )
}

/// Routes each pooled gradient to its argmax position.
pub fn max_pool2d_backward(grad_out: &Tensor, indices: &PoolIndices) -> Tensor {
    let plane_in = indices.input.plane();
    let plane_out = indices.output.plane();
    let mut dx = vec![0.0; indices.input.numel()];
    for (p, (g, ix)) in grad_out
        .data()
        .chunks(plane_out)
        .zip(indices.indices.chunks(plane_out))
        .enumerate()
    {
        let dplane = &mut dx[p * plane_in..][..plane_in];
        for (&gv, &i) in g.iter().zip(ix) {
            dplane[i] += gv;
        }
    }
    Tensor::new(indices.input, dx).expect("sized by indices")
}

/// Average pooling with zero fill: every window sum is divided by `window²`.
pub fn avg_pool2d_forward(input: &Tensor, plan: &PoolPlan) -> Tensor {
    let [n, c, h, w] = plan.input.0;
    let [_, _, oh, ow] = plan.output.0;
    let norm = 1.0 / (plan.window * plan.window) as f64;
    let x = input.data();
    let mut out = Vec::with_capacity(plan.output.numel());
    for p in 0..n * c {
        let xin = &x[p * h * w..][..h * w];
        for oy in 0..oh {
            let (y0, y1) = plan.span(oy, plan.pads.top, h);
            for ox in 0..ow {
                let (x0, x1) = plan.span(ox, plan.pads.left, w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += xin[y * w + xx];
                    }
                }
                out.push(acc * norm);
            }
        }
    }
    Tensor::new(plan.output, out).expect("sized by plan")
}

pub fn avg_pool2d_backward(grad_out: &Tensor, plan: &PoolPlan) -> Tensor {
    let [n, c, h, w] = plan.input.0;
    let [_, _, oh, ow] = plan.output.0;
    let norm = 1.0 / (plan.window * plan.window) as f64;
    let g = grad_out.data();
    let mut dx = vec![0.0; plan.input.numel()];
    for p in 0..n * c {
        let gplane = &g[p * oh * ow..][..oh * ow];
        let dplane = &mut dx[p * h * w..][..h * w];
        for oy in 0..oh {
            let (y0, y1) = plan.span(oy, plan.pads.top, h);
            for ox in 0..ow {
                let (x0, x1) = plan.span(ox, plan.pads.left, w);
                let gv = gplane[oy * ow + ox] * norm;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        dplane[y * w + xx] += gv;
                    }
                }
            }
        }
    }
    Tensor::new(plan.input, dx).expect("sized by plan")
}

/// Scatters each pooled value back to its recorded argmax position of an
/// `output`-shaped zero tensor.
pub fn max_unpool2d_forward(input: &Tensor, indices: &PoolIndices, output: Shape) -> Result<Tensor> {
    if input.shape() != indices.output {
        return Err(Error::DecoderPairing(format!(
            "unpool input {} does not match pooled shape {} of its indices",
            input.shape(),
            indices.output
        )));
    }
    if output != indices.input {
        return Err(Error::DecoderPairing(format!(
            "unpool target {output} differs from the pooled source {}",
            indices.input
        )));
    }
    let plane_in = input.shape().plane();
    let plane_out = output.plane();
    let mut out = vec![0.0; output.numel()];
    for (p, (xs, ix)) in input
        .data()
        .chunks(plane_in)
        .zip(indices.indices.chunks(plane_in))
        .enumerate()
    {
        let dst = &mut out[p * plane_out..][..plane_out];
        for (&v, &i) in xs.iter().zip(ix) {
            let slot = dst.get_mut(i).ok_or_else(|| {
                Error::Corruption(format!("unpool index {i} outside plane of {plane_out}"))
            })?;
            *slot += v;
        }
    }
    Tensor::new(output, out)
}

/// Gathers the gradient at every recorded position.
pub fn max_unpool2d_backward(grad_out: &Tensor, indices: &PoolIndices) -> Tensor {
    let plane_in = indices.output.plane();
    let plane_out = indices.input.plane();
    let g = grad_out.data();
    let mut dx = Vec::with_capacity(indices.output.numel());
    for (p, ix) in indices.indices.chunks(plane_in).enumerate() {
        let gplane = &g[p * plane_out..][..plane_out];
        dx.extend(ix.iter().map(|&i| gplane[i]));
    }
    Tensor::new(indices.output, dx).expect("sized by indices")
}

/// Replicates every pixel into a `factor×factor` block.
pub fn upsample_nearest_forward(input: &Tensor, factor: usize) -> Tensor {
    let [n, c, h, w] = input.dims();
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let xin = &x[p * h * w..][..h * w];
        for oy in 0..oh {
            let row = &xin[(oy / factor) * w..][..w];
            for ox in 0..ow {
                out.push(row[ox / factor]);
            }
        }
    }
    Tensor::new(Shape::new(n, c, oh, ow), out).expect("sized above")
}

pub fn upsample_nearest_backward(grad_out: &Tensor, input: Shape, factor: usize) -> Tensor {
    let [n, c, h, w] = input.0;
    let (oh, ow) = (h * factor, w * factor);
    let g = grad_out.data();
    let mut dx = vec![0.0; input.numel()];
    for p in 0..n * c {
        let gplane = &g[p * oh * ow..][..oh * ow];
        let dplane = &mut dx[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                dplane[(oy / factor) * w + ox / factor] += gplane[oy * ow + ox];
            }
        }
    }
    Tensor::new(input, dx).expect("sized by input")
}
