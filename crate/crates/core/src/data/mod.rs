//! CT volumes and slices: NIfTI ingestion, slicing, resizing, augmentation,
//! labels and patient-grouped splits.

pub mod augment;
pub mod io;
pub mod nifti;
mod resize;
mod split;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentParams, AugmentationSpec};
pub use nifti::{read_nifti, write_nifti, Datatype, NiftiVolume};
pub use resize::{resize_bilinear, resize_nearest, resize_slice};
pub use split::{split_dataset, split_groups, DatasetSplit, Split};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Healthy,
    Covid,
}

impl Label {
    /// Class index used by the networks; COVID is the positive class 1.
    pub fn index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Covid => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Healthy),
            1 => Some(Label::Covid),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    /// Patient/volume identifier; splits never separate one id.
    pub volume: String,
    pub slice: usize,
}

/// One 2-D slice: a 1×3×H×W image in [0, 1] and an optional 1×1×H×W
/// binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceRecord {
    pub image: Tensor,
    pub mask: Option<Tensor>,
    pub label: Label,
    pub provenance: Provenance,
}

impl SliceRecord {
    pub fn new(image: Tensor, mask: Option<Tensor>, label: Label, provenance: Provenance) -> Result<Self> {
        let [n, c, h, w] = image.dims();
        if n != 1 || c != 3 {
            return Err(Error::Shape(format!("slice image must be 1×3×H×W, got {}", image.shape())));
        }
        image.check_finite("slice image")?;
        if let Some(m) = &mask {
            if m.dims() != [1, 1, h, w] {
                return Err(Error::Pairing(format!(
                    "mask {} does not match image {}",
                    m.shape(),
                    image.shape()
                )));
            }
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Argument("mask values must be 0 or 1".into()));
            }
        }
        Ok(SliceRecord {
            image,
            mask,
            label,
            provenance,
        })
    }

    pub fn height(&self) -> usize {
        self.image.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.image.dims()[3]
    }
}

pub const DEFAULT_LABEL_THRESHOLD: usize = 1;

/// COVID iff the mask has at least `threshold` positive pixels.
pub fn label_from_mask(mask: &Tensor, threshold: usize) -> Label {
    let positives = mask.data().iter().filter(|&&v| v > 0.0).count();
    if positives >= threshold {
        Label::Covid
    } else {
        Label::Healthy
    }
}

/// A CT volume with its optional lesion mask.
#[derive(Clone, Debug)]
pub struct VolumeRecord {
    pub id: String,
    pub path: PathBuf,
    pub volume: NiftiVolume,
    pub mask: Option<NiftiVolume>,
}

impl VolumeRecord {
    pub fn new(id: String, path: PathBuf, volume: NiftiVolume, mask: Option<NiftiVolume>) -> Result<Self> {
        if let Some(m) = &mask {
            if m.dims != volume.dims {
                return Err(Error::Pairing(format!(
                    "{}: mask dims {:?} differ from image dims {:?}",
                    path.display(),
                    m.dims,
                    volume.dims
                )));
            }
        }
        Ok(VolumeRecord { id, path, volume, mask })
    }

    pub fn range(&self) -> (f64, f64) {
        self.volume.range()
    }
}

/// One record per axial index. Intensities are min-max normalized over the
/// whole volume (a constant volume maps to zeros); rows are y, columns x.
/// Slices of volumes without a mask are labeled Healthy.
pub fn slice_volume(record: &VolumeRecord, label_threshold: usize) -> Result<Vec<SliceRecord>> {
    let v = &record.volume;
    let [xs, ys, zs] = v.dims;
    if let Some(m) = &record.mask {
        if m.dims != v.dims {
            return Err(Error::Pairing(format!(
                "{}: mask dims {:?} differ from image dims {:?}",
                record.path.display(),
                m.dims,
                v.dims
            )));
        }
    }
    let (lo, hi) = v.range();
    let span = hi - lo;
    let norm = |x: f64| if span > 0.0 { (x - lo) / span } else { 0.0 };
    let plane = xs * ys;
    let mut out = Vec::with_capacity(zs);
    for z in 0..zs {
        let src = &v.voxels[z * plane..(z + 1) * plane];
        let gray: Vec<f64> = src.iter().map(|&x| norm(x)).collect();
        let mut data = Vec::with_capacity(3 * plane);
        for _ in 0..3 {
            data.extend_from_slice(&gray);
        }
        let image = Tensor::new([1, 3, ys, xs], data)?;
        let mask = match &record.mask {
            Some(m) => {
                let bits = m.voxels[z * plane..(z + 1) * plane]
                    .iter()
                    .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
                    .collect();
                Some(Tensor::new([1, 1, ys, xs], bits)?)
            }
            None => None,
        };
        let label = mask
            .as_ref()
            .map_or(Label::Healthy, |m| label_from_mask(m, label_threshold));
        out.push(SliceRecord::new(
            image,
            mask,
            label,
            Provenance {
                volume: record.id.clone(),
                slice: z,
            },
        )?);
    }
    Ok(out)
}
