//! Random rotation, shear and reflection applied as one affine map about the
//! image center.

use serde::{Deserialize, Serialize};

use crate::data::SliceRecord;
use crate::error::{Error, Result};
use crate::tensor::{RngState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    /// Rotation drawn from ±this many degrees.
    pub rotation_degrees: f64,
    /// Horizontal shear factor drawn from ±this.
    pub shear: f64,
    /// Independent probability of mirroring along each axis.
    pub flip_probability: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotation_degrees: 30.0,
            shear: 0.05,
            flip_probability: 0.5,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rotation_degrees >= 0.0
            && self.rotation_degrees.is_finite()
            && self.shear >= 0.0
            && self.shear.is_finite()
            && (0.0..=1.0).contains(&self.flip_probability);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation spec {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut RngState) -> AugmentParams {
        AugmentParams {
            rotation_degrees: rng.uniform_inclusive(-self.rotation_degrees, self.rotation_degrees),
            shear: rng.uniform_inclusive(-self.shear, self.shear),
            flip_x: rng.bernoulli(self.flip_probability),
            flip_y: rng.bernoulli(self.flip_probability),
        }
    }
}

/// One concrete draw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_degrees: f64,
    pub shear: f64,
    /// Mirror columns (x → −x).
    pub flip_x: bool,
    /// Mirror rows (y → −y).
    pub flip_y: bool,
}

impl AugmentParams {
    /// Forward 2×2 map `flip · shear · rotation` in centered `(x, y)`
    /// coordinates, as `[a, b, c, d]` for `x' = a·x + b·y`, `y' = c·x + d·y`.
    pub fn matrix(&self) -> [f64; 4] {
        let (s, c) = self.rotation_degrees.to_radians().sin_cos();
        let r = [c, -s, s, c];
        let sh = [r[0] + self.shear * r[2], r[1] + self.shear * r[3], r[2], r[3]];
        let fx = if self.flip_x { -1.0 } else { 1.0 };
        let fy = if self.flip_y { -1.0 } else { 1.0 };
        [fx * sh[0], fx * sh[1], fy * sh[2], fy * sh[3]]
    }

    fn inverse(&self) -> [f64; 4] {
        let [a, b, c, d] = self.matrix();
        let det = a * d - b * c;
        [d / det, -b / det, -c / det, a / det]
    }

    /// Applies the map to one record: bilinear image sampling with zero fill,
    /// nearest-neighbour mask sampling, label unchanged.
    pub fn apply(&self, record: &SliceRecord) -> Result<SliceRecord> {
        let image = warp(&record.image, self, Sampling::Bilinear);
        let mask = record.mask.as_ref().map(|m| warp(m, self, Sampling::Nearest));
        SliceRecord::new(image, mask, record.label, record.provenance.clone())
    }
}

#[derive(Clone, Copy)]
enum Sampling {
    Bilinear,
    Nearest,
}

fn warp(input: &Tensor, params: &AugmentParams, sampling: Sampling) -> Tensor {
    let [n, c, h, w] = input.dims();
    let inv = params.inverse();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Tensor::zeros(input.shape());
    let plane = h * w;
    let coords: Vec<(f64, f64)> = (0..plane)
        .map(|i| {
            let (y, x) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
            (inv[0] * x + inv[1] * y + cx, inv[2] * x + inv[3] * y + cy)
        })
        .collect();
    for p in 0..n * c {
        let src = &input.data()[p * plane..(p + 1) * plane];
        let dst = &mut out.data_mut()[p * plane..(p + 1) * plane];
        let fetch = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                src[y as usize * w + x as usize]
            }
        };
        for (d, &(sx, sy)) in dst.iter_mut().zip(&coords) {
            *d = match sampling {
                Sampling::Nearest => fetch(sy.round() as isize, sx.round() as isize),
                Sampling::Bilinear => {
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = (sx - x0, sy - y0);
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    let top = fetch(y0, x0) * (1.0 - fx) + if fx > 0.0 { fetch(y0, x0 + 1) * fx } else { 0.0 };
                    let bottom = if fy > 0.0 {
                        (fetch(y0 + 1, x0) * (1.0 - fx) + if fx > 0.0 { fetch(y0 + 1, x0 + 1) * fx } else { 0.0 }) * fy
                    } else {
                        0.0
                    };
                    top * (1.0 - fy) + bottom
                }
            };
        }
    }
    out
}

/// Draws parameters from `spec` and applies them.
pub fn augment(record: &SliceRecord, spec: &AugmentationSpec, rng: &mut RngState) -> Result<SliceRecord> {
    spec.sample(rng).apply(record)
}
