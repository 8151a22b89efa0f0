//! Image files, dataset directories and the JSON-lines manifest.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::data::nifti::read_nifti;
use crate::data::{label_from_mask, Label, Provenance, SliceRecord, Split, VolumeRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::util::write_atomic;

fn open_image(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// 1×3×H×W in [0, 1]; grayscale is replicated, colour keeps RGB.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img.color().channel_count() {
        1 | 2 => {
            let g = img.to_luma8();
            let plane: Vec<f64> = g.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
            [plane.clone(), plane.clone(), plane].concat()
        }
        _ => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            (0..3)
                .flat_map(|c| (0..h * w).map(move |i| f64::from(raw[3 * i + c]) / 255.0))
                .collect()
        }
    };
    Tensor::new([1, 3, h, w], data)
}

/// 1×1×H×W mask, any nonzero luma counting as lesion.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let g = open_image(path)?.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    let data = g.as_raw().iter().map(|&v| if v > 0 { 1.0 } else { 0.0 }).collect();
    Tensor::new([1, 1, h, w], data)
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm" | "pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Unsupported(format!(
            "{}: images are written as .png or .pgm",
            path.display()
        ))),
    }
}

/// Writes an H×W plane of values in [0, 1] as 8-bit grayscale.
pub fn write_gray(path: &Path, plane: &[f64], h: usize, w: usize) -> Result<()> {
    if plane.len() != h * w {
        return Err(Error::Shape(format!("{} values for a {h}×{w} image", plane.len())));
    }
    let bytes: Vec<u8> = plane.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = GrayImage::from_raw(w as u32, h as u32, bytes).expect("length checked above");
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, format_for(path)?).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, &buf.into_inner())
}

/// Writes a binary mask as 0/255 grayscale.
pub fn write_mask(path: &Path, mask: &Tensor) -> Result<()> {
    let [_, _, h, w] = mask.dims();
    let plane: Vec<f64> = mask.plane(0, 0).iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    write_gray(path, &plane, h, w)
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// `<volume>:<slice>`; the part before the last `:` is the split group.
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn group(&self) -> &str {
        self.id.rsplit_once(':').map_or(self.id.as_str(), |(g, _)| g)
    }

    pub fn slice_index(&self) -> usize {
        self.id
            .rsplit_once(':')
            .and_then(|(_, s)| s.parse().ok())
            .unwrap_or(0)
    }

    /// Loads the image (and mask, if any). Relative paths resolve against
    /// `base`, normally the manifest's directory.
    pub fn load(&self, base: &Path) -> Result<SliceRecord> {
        let image = read_image(&base.join(&self.path))?;
        let mask = self.mask_path.as_ref().map(|m| read_mask(&base.join(m))).transpose()?;
        SliceRecord::new(
            image,
            mask,
            self.label,
            Provenance {
                volume: self.group().to_string(),
                slice: self.slice_index(),
            },
        )
        .map_err(|e| match e {
            Error::Pairing(m) => Error::Pairing(format!("{}: {m}", self.id)),
            other => other,
        })
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Name without `.nii`, `.nii.gz` or an image extension.
pub fn stem(path: &Path) -> String {
    let name = file_name(path);
    for ext in [".nii.gz", ".nii", ".png", ".pgm", ".pnm"] {
        if name.len() > ext.len() && name.to_ascii_lowercase().ends_with(ext) {
            return name[..name.len() - ext.len()].to_string();
        }
    }
    name
}

fn is_volume(path: &Path) -> bool {
    let n = file_name(path).to_ascii_lowercase();
    n.ends_with(".nii") || n.ends_with(".nii.gz")
}

fn is_image(path: &Path) -> bool {
    let n = file_name(path).to_ascii_lowercase();
    [".png", ".pgm", ".pnm"].iter().any(|e| n.ends_with(e))
}

/// Finds the file in `dir` with the same stem as `path`.
fn sibling(dir: &Path, path: &Path, accept: fn(&Path) -> bool) -> Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let want = stem(path);
    Ok(sorted_entries(dir)?.into_iter().find(|p| accept(p) && stem(p) == want))
}

/// Volume mode: every `.nii`/`.nii.gz` in `dir`, paired with the same-named
/// file in `mask_dir` when given.
pub fn load_volume_dir(dir: &Path, mask_dir: Option<&Path>) -> Result<Vec<VolumeRecord>> {
    let mut out = Vec::new();
    for path in sorted_entries(dir)?.into_iter().filter(|p| is_volume(p)) {
        let volume = read_nifti(&path)?;
        let mask = match mask_dir {
            Some(md) => sibling(md, &path, is_volume)?.map(|m| read_nifti(&m)).transpose()?,
            None => None,
        };
        out.push(VolumeRecord::new(stem(&path), path, volume, mask)?);
    }
    Ok(out)
}

/// Class of a slice-mode directory name.
pub fn class_of_dir(name: &str) -> Option<Label> {
    let n = name.to_ascii_lowercase();
    if n.contains("healthy") || n.contains("normal") || n.contains("non") || n.contains("negative") {
        Some(Label::Healthy)
    } else if n.contains("covid") || n.contains("positive") || n.contains("infect") {
        Some(Label::Covid)
    } else {
        None
    }
}

/// A slice-mode image with where it came from.
#[derive(Clone, Debug)]
pub struct SliceFile {
    pub record: SliceRecord,
    pub path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

/// Slice mode: `dir/<class>/<image>` with an optional parallel mask tree
/// `mask_dir/<class>/<image>`. When a mask exists it decides the label.
pub fn load_slice_dir(dir: &Path, mask_dir: Option<&Path>, label_threshold: usize) -> Result<Vec<SliceFile>> {
    let mut out = Vec::new();
    for class_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        let class_name = file_name(&class_dir);
        let class = class_of_dir(&class_name).ok_or_else(|| {
            Error::format(&class_dir, "class directory name must mention covid or healthy")
        })?;
        for path in sorted_entries(&class_dir)?.into_iter().filter(|p| is_image(p)) {
            let image = read_image(&path)?;
            let mask_path = match mask_dir {
                Some(md) => sibling(&md.join(&class_name), &path, is_image)?,
                None => None,
            };
            let mask = mask_path.as_ref().map(|m| read_mask(m)).transpose()?;
            let label = mask.as_ref().map_or(class, |m| label_from_mask(m, label_threshold));
            let id = format!("{class_name}/{}", stem(&path));
            let record = SliceRecord::new(image, mask, label, Provenance { volume: id, slice: 0 })
                .map_err(|e| match e {
                    Error::Pairing(m) => Error::Pairing(format!("{}: {m}", path.display())),
                    other => other,
                })?;
            out.push(SliceFile {
                record,
                path,
                mask_path,
            });
        }
    }
    Ok(out)
}
