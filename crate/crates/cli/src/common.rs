use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use cbstm_core::data::io::{read_manifest, ManifestEntry};
use cbstm_core::data::{resize_slice, Label, SliceRecord, Split};
use cbstm_core::{write_atomic, Error};

/// Process exit status plus the message printed on stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => Failure::numeric(e.to_string()),
            other => Failure::usage(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(Failure::from)
}

pub fn make_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))
}

/// Manifest entries with their loaded records, resized to `size` when the
/// stored slice differs.
pub struct Dataset {
    pub entries: Vec<ManifestEntry>,
    pub records: Vec<SliceRecord>,
}

impl Dataset {
    pub fn load(manifest: &Path, size: Option<[usize; 2]>) -> Result<Dataset, Failure> {
        let entries = read_manifest(manifest)?;
        if entries.is_empty() {
            return Err(Failure::usage(format!("{}: manifest is empty", manifest.display())));
        }
        let base = manifest.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let records = entries
            .par_iter()
            .map(|e| {
                let r = e.load(&base)?;
                match size {
                    Some([h, w]) if (r.height(), r.width()) != (h, w) => resize_slice(&r, h, w),
                    _ => Ok(r),
                }
            })
            .collect::<Result<Vec<_>, Error>>()?;
        Ok(Dataset { entries, records })
    }

    /// Keeps the records selected by `keep`.
    pub fn retain(self, keep: impl Fn(&ManifestEntry, &SliceRecord) -> bool) -> Dataset {
        let (entries, records) = self
            .entries
            .into_iter()
            .zip(self.records)
            .filter(|(e, r)| keep(e, r))
            .unzip();
        Dataset { entries, records }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

/// COVID slices carrying a mask: the segmentation population.
pub fn segmentation_candidate(_: &ManifestEntry, r: &SliceRecord) -> bool {
    r.label == Label::Covid && r.mask.is_some()
}
