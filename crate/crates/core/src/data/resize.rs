use crate::data::SliceRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps output index `i` to a source coordinate with half-pixel centers.
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    let s = (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
    s.clamp(0.0, (src - 1) as f64)
}

fn check(src: [usize; 4], h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || src[2] == 0 || src[3] == 0 {
        return Err(Error::Argument(format!(
            "cannot resize {}×{} to {h}×{w}",
            src[2], src[3]
        )));
    }
    Ok(())
}

/// Bilinear resize of every plane.
pub fn resize_bilinear(input: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, c, ih, iw] = input.dims();
    check(input.dims(), h, w)?;
    if (ih, iw) == (h, w) {
        return Ok(input.clone());
    }
    let ys: Vec<(usize, usize, f64)> = (0..h)
        .map(|y| {
            let s = source_coord(y, ih, h);
            let y0 = s.floor() as usize;
            (y0, (y0 + 1).min(ih - 1), s - y0 as f64)
        })
        .collect();
    let xs: Vec<(usize, usize, f64)> = (0..w)
        .map(|x| {
            let s = source_coord(x, iw, w);
            let x0 = s.floor() as usize;
            (x0, (x0 + 1).min(iw - 1), s - x0 as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for ch in 0..c {
            let p = input.plane(b, ch);
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = p[y0 * iw + x0] * (1.0 - fx) + p[y0 * iw + x1] * fx;
                    let bottom = p[y1 * iw + x0] * (1.0 - fx) + p[y1 * iw + x1] * fx;
                    out.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Tensor::new([n, c, h, w], out)
}

/// Nearest-neighbour resize; keeps masks binary.
pub fn resize_nearest(input: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, c, ih, iw] = input.dims();
    check(input.dims(), h, w)?;
    let pick = |i: usize, src: usize, dst: usize| ((((i as f64 + 0.5) * src as f64) / dst as f64) as usize).min(src - 1);
    let ys: Vec<usize> = (0..h).map(|y| pick(y, ih, h)).collect();
    let xs: Vec<usize> = (0..w).map(|x| pick(x, iw, w)).collect();
    let mut out = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for ch in 0..c {
            let p = input.plane(b, ch);
            for &y in &ys {
                for &x in &xs {
                    out.push(p[y * iw + x]);
                }
            }
        }
    }
    Tensor::new([n, c, h, w], out)
}

/// Resizes the image bilinearly and the mask by nearest neighbour.
pub fn resize_slice(record: &SliceRecord, h: usize, w: usize) -> Result<SliceRecord> {
    let image = resize_bilinear(&record.image, h, w)?;
    let mask = record.mask.as_ref().map(|m| resize_nearest(m, h, w)).transpose()?;
    SliceRecord::new(image, mask, record.label, record.provenance.clone())
}
