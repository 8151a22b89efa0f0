//! Direct 2-D convolution with stride, dilation and zero padding.
//!
//! Each output plane is accumulated as a sum of shifted row `axpy`s over the
//! input planes, so no im2col buffer is materialized. Work is split across
//! output planes (forward, kernel gradient) or input planes (input gradient);
//! every element is summed in a fixed order regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output extent `ceil(input / stride)`; any odd pixel of padding goes to
    /// the bottom/right edge.
    Same,
    /// Symmetric padding on every edge.
    Explicit(usize),
}

/// Resolved padding on each edge of a plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pads {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Resolves padding along one axis and returns `(before, after, output_len)`.
pub(crate) fn axis_geometry(
    input: usize,
    extent: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, usize)> {
    let (before, after) = match padding {
        Padding::Explicit(p) => (p, p),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out.max(1) - 1) * stride + extent).saturating_sub(input);
            (total / 2, total - total / 2)
        }
    };
    let padded = input + before + after;
    if padded < extent || input == 0 {
        return Err(Error::Geometry(format!(
            "window extent {extent} exceeds padded input extent {padded}"
        )));
    }
    Ok((before, after, (padded - extent) / stride + 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dConfig {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Default for Conv2dConfig {
    fn default() -> Self {
        Conv2dConfig {
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
        }
    }
}

impl Conv2dConfig {
    pub fn same() -> Self {
        Self::default()
    }

    pub fn dilated(dilation: usize) -> Self {
        Conv2dConfig {
            dilation,
            ..Self::default()
        }
    }

    pub fn explicit(padding: usize) -> Self {
        Conv2dConfig {
            padding: Padding::Explicit(padding),
            ..Self::default()
        }
    }
}

/// Fully resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
pub struct ConvPlan {
    pub input: Shape,
    pub kernel: Shape,
    pub output: Shape,
    pub pads: Pads,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvPlan {
    pub fn new(input: Shape, kernel: Shape, cfg: Conv2dConfig) -> Result<Self> {
        let [n, c, h, w] = input.0;
        let [co, ci, kh, kw] = kernel.0;
        if ci != c {
            return Err(Error::Shape(format!(
                "conv2d: input has {c} channels but kernel expects {ci}"
            )));
        }
        if kh == 0 || kw == 0 || co == 0 {
            return Err(Error::Shape(format!("conv2d: degenerate kernel {kernel}")));
        }
        if cfg.stride == 0 || cfg.dilation == 0 {
            return Err(Error::Argument("conv2d: stride and dilation must be ≥ 1".into()));
        }
        let eh = (kh - 1) * cfg.dilation + 1;
        let ew = (kw - 1) * cfg.dilation + 1;
        let (top, bottom, oh) = axis_geometry(h, eh, cfg.stride, cfg.padding)?;
        let (left, right, ow) = axis_geometry(w, ew, cfg.stride, cfg.padding)?;
        Ok(ConvPlan {
            input,
            kernel,
            output: Shape::new(n, co, oh, ow),
            pads: Pads {
                top,
                bottom,
                left,
                right,
            },
            stride: cfg.stride,
            dilation: cfg.dilation,
        })
    }

    /// Output range `[lo, hi)` whose tap at kernel offset `k` lands inside an
    /// input of extent `len`, plus the input coordinate of output 0.
    #[inline]
    fn valid_range(&self, k: usize, pad: usize, len: usize, out: usize) -> (usize, usize, isize) {
        let s = self.stride as isize;
        let origin = (k * self.dilation) as isize - pad as isize;
        // smallest o with origin + o*s >= 0
        let lo = if origin >= 0 { 0 } else { ((-origin) + s - 1) / s };
        // largest o with origin + o*s <= len - 1
        let last = len as isize - 1 - origin;
        let hi = if last < 0 { 0 } else { (last / s + 1).min(out as isize) };
        (lo as usize, hi.max(lo) as usize, origin)
    }
}

pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &[f64], plan: &ConvPlan) -> Tensor {
    let [_, ci, h, w] = plan.input.0;
    let [co, _, kh, kw] = plan.kernel.0;
    let [_, _, oh, ow] = plan.output.0;
    debug_assert_eq!(bias.len(), co);
    let s = plan.stride;
    let mut out = vec![0.0; plan.output.numel()];
    let x = input.data();
    let k = kernel.data();
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(idx, plane)| {
        let (b, o) = (idx / co, idx % co);
        plane.fill(bias[o]);
        for c in 0..ci {
            let xin = &x[(b * ci + c) * h * w..][..h * w];
            for ky in 0..kh {
                let (ylo, yhi, yorg) = plan.valid_range(ky, plan.pads.top, h, oh);
                for kx in 0..kw {
                    let wv = k[((o * ci + c) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (xlo, xhi, xorg) = plan.valid_range(kx, plan.pads.left, w, ow);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = (yorg + (oy * s) as isize) as usize;
                        let row = &xin[iy * w..][..w];
                        let dst = &mut plane[oy * ow..][..ow];
                        if s == 1 {
                            let ix0 = (xorg + xlo as isize) as usize;
                            let src = &row[ix0..ix0 + (xhi - xlo)];
                            for (d, &v) in dst[xlo..xhi].iter_mut().zip(src) {
                                *d += wv * v;
                            }
                        } else {
                            for ox in xlo..xhi {
                                let ix = (xorg + (ox * s) as isize) as usize;
                                dst[ox] += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(plan.output, out).expect("conv output sized by plan")
}

/// Gradients of the convolution with respect to input, kernel and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    plan: &ConvPlan,
) -> (Tensor, Tensor, Vec<f64>) {
    let [n, ci, h, w] = plan.input.0;
    let [co, _, kh, kw] = plan.kernel.0;
    let [_, _, oh, ow] = plan.output.0;
    let s = plan.stride;
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();

    // input gradient: one task per input plane
    let mut dx = vec![0.0; plan.input.numel()];
    dx.par_chunks_mut(h * w).enumerate().for_each(|(idx, dplane)| {
        let (b, c) = (idx / ci, idx % ci);
        for o in 0..co {
            let gplane = &g[(b * co + o) * oh * ow..][..oh * ow];
            for ky in 0..kh {
                let (ylo, yhi, yorg) = plan.valid_range(ky, plan.pads.top, h, oh);
                for kx in 0..kw {
                    let wv = k[((o * ci + c) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (xlo, xhi, xorg) = plan.valid_range(kx, plan.pads.left, w, ow);
                    for oy in ylo..yhi {
                        let iy = (yorg + (oy * s) as isize) as usize;
                        let grow = &gplane[oy * ow..][..ow];
                        let drow = &mut dplane[iy * w..][..w];
                        for ox in xlo..xhi {
                            let ix = (xorg + (ox * s) as isize) as usize;
                            drow[ix] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });

    // kernel gradient: one task per output channel
    let per_out = ci * kh * kw;
    let mut dk = vec![0.0; plan.kernel.numel()];
    dk.par_chunks_mut(per_out).enumerate().for_each(|(o, dko)| {
        for b in 0..n {
            let gplane = &g[(b * co + o) * oh * ow..][..oh * ow];
            for c in 0..ci {
                let xin = &x[(b * ci + c) * h * w..][..h * w];
                for ky in 0..kh {
                    let (ylo, yhi, yorg) = plan.valid_range(ky, plan.pads.top, h, oh);
                    for kx in 0..kw {
                        let (xlo, xhi, xorg) = plan.valid_range(kx, plan.pads.left, w, ow);
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = (yorg + (oy * s) as isize) as usize;
                            let grow = &gplane[oy * ow..][..ow];
                            let xrow = &xin[iy * w..][..w];
                            for ox in xlo..xhi {
                                let ix = (xorg + (ox * s) as isize) as usize;
                                acc += grow[ox] * xrow[ix];
                            }
                        }
                        dko[(c * kh + ky) * kw + kx] += acc;
                    }
                }
            }
        }
    });

    let db = (0..co)
        .map(|o| {
            (0..n)
                .map(|b| g[(b * co + o) * oh * ow..][..oh * ow].iter().sum::<f64>())
                .sum()
        })
        .collect();

    (
        Tensor::new(plan.input, dx).expect("sized by plan"),
        Tensor::new(plan.kernel, dk).expect("sized by plan"),
        db,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;

    fn naive(x: &Tensor, k: &Tensor, bias: &[f64], plan: &ConvPlan) -> Tensor {
        let [n, ci, h, w] = x.dims();
        let [co, _, kh, kw] = k.dims();
        Tensor::from_fn(plan.output, |[b, o, oy, ox]| {
            let mut acc = bias[o];
            for c in 0..ci {
                for i in 0..kh {
                    for j in 0..kw {
                        let iy = (oy * plan.stride + i * plan.dilation) as isize - plan.pads.top as isize;
                        let ix = (ox * plan.stride + j * plan.dilation) as isize - plan.pads.left as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += x.at(b, c, iy as usize, ix as usize) * k.at(o, c, i, j);
                        }
                    }
                }
            }
            let _ = (n, co);
            acc
        })
    }

    #[test]
    fn same_padding_puts_extra_pixel_bottom_right() {
        let (before, after, out) = axis_geometry(5, 2, 1, Padding::Same).unwrap();
        assert_eq!((before, after, out), (0, 1, 5));
        let (before, after, out) = axis_geometry(7, 2, 2, Padding::Same).unwrap();
        assert_eq!((before, after, out), (0, 1, 4));
        let (before, after, out) = axis_geometry(8, 5, 1, Padding::Same).unwrap();
        assert_eq!((before, after, out), (2, 2, 8));
    }

    #[test]
    fn geometry_error_when_output_empty() {
        let plan = ConvPlan::new(
            Shape::new(1, 1, 2, 2),
            Shape::new(1, 1, 3, 3),
            Conv2dConfig::explicit(0),
        );
        assert!(matches!(plan, Err(Error::Geometry(_))));
    }

    #[test]
    fn strided_and_padded_match_naive() {
        let mut rng = RngState::new(3);
        for &(stride, dil, pad) in &[
            (2, 1, Padding::Explicit(1)),
            (3, 2, Padding::Same),
            (1, 3, Padding::Explicit(0)),
            (2, 2, Padding::Same),
        ] {
            let x = Tensor::randn([2, 3, 9, 7], 1.0, &mut rng);
            let k = Tensor::randn([4, 3, 3, 2], 1.0, &mut rng);
            let bias: Vec<f64> = (0..4).map(|i| i as f64 * 0.1).collect();
            let plan = ConvPlan::new(
                x.shape(),
                k.shape(),
                Conv2dConfig {
                    stride,
                    dilation: dil,
                    padding: pad,
                },
            )
            .unwrap();
            let fast = conv2d_forward(&x, &k, &bias, &plan);
            let slow = naive(&x, &k, &bias, &plan);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // conv is bilinear: <conv(x, k), g> = <x, dx> = <k, dk>
        let mut rng = RngState::new(11);
        let x = Tensor::randn([2, 2, 6, 5], 1.0, &mut rng);
        let k = Tensor::randn([3, 2, 3, 3], 1.0, &mut rng);
        let g = Tensor::randn([2, 3, 3, 3], 1.0, &mut rng);
        let plan = ConvPlan::new(
            x.shape(),
            k.shape(),
            Conv2dConfig {
                stride: 2,
                dilation: 1,
                padding: Padding::Same,
            },
        )
        .unwrap();
        assert_eq!(plan.output, g.shape());
        let zero = vec![0.0; 3];
        let y = conv2d_forward(&x, &k, &zero, &plan);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let (dx, dk, _) = conv2d_backward(&x, &k, &g, &plan);
        let via_x: f64 = dx.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        let via_k: f64 = dk.data().iter().zip(k.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_k).abs() < 1e-10);
    }
}
