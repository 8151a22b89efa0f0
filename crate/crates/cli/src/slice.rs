use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use cbstm_core::data::io::{load_slice_dir, load_volume_dir, write_gray, write_manifest, write_mask, ManifestEntry};
use cbstm_core::data::{resize_slice, slice_volume, split_dataset, Label, SliceRecord, Split, DEFAULT_LABEL_THRESHOLD};
use cbstm_core::Error;

use crate::common::{make_dir, Failure};

#[derive(Args, Debug)]
pub struct SliceArgs {
    /// Directory of .nii/.nii.gz volumes, or of class folders holding images.
    #[arg(long)]
    input: PathBuf,
    /// Destination for images/, masks/ and manifest.jsonl.
    #[arg(long)]
    output: PathBuf,
    /// Side length of the square output slices.
    #[arg(long, default_value_t = 304)]
    size: usize,
    /// Masks with the same file names as the inputs (same class folders in
    /// image mode).
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    /// Seed of the volume-grouped train/validation/test split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of slices held out for testing.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Share of the remaining slices held out for validation.
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    /// Lesion pixels a mask needs before its slice counts as COVID.
    #[arg(long, default_value_t = DEFAULT_LABEL_THRESHOLD)]
    label_threshold: usize,
}

#[derive(Serialize)]
struct Summary {
    records: usize,
    healthy: usize,
    covid: usize,
    splits: BTreeMap<&'static str, usize>,
    manifest: PathBuf,
}

fn has_volumes(dir: &Path) -> Result<bool, Failure> {
    let rd = std::fs::read_dir(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    Ok(rd.filter_map(|e| e.ok()).any(|e| {
        let n = e.file_name().to_string_lossy().to_ascii_lowercase();
        n.ends_with(".nii") || n.ends_with(".nii.gz")
    }))
}

/// Records with the file stem each one is written under.
fn collect(args: &SliceArgs) -> Result<Vec<(String, SliceRecord)>, Failure> {
    let mut out = Vec::new();
    if has_volumes(&args.input)? {
        for v in load_volume_dir(&args.input, args.mask_dir.as_deref())? {
            for r in slice_volume(&v, args.label_threshold)? {
                out.push((format!("{}_{:04}", v.id, r.provenance.slice), r));
            }
        }
    } else {
        for f in load_slice_dir(&args.input, args.mask_dir.as_deref(), args.label_threshold)? {
            let name = f.record.provenance.volume.replace(['/', '\\'], "_");
            out.push((name, f.record));
        }
    }
    if out.is_empty() {
        return Err(Failure::usage(format!("{}: no volumes or images found", args.input.display())));
    }
    Ok(out)
}

pub fn run(args: &SliceArgs) -> Result<(), Failure> {
    if args.size == 0 {
        return Err(Failure::usage("--size must be positive"));
    }
    let records = collect(args)?;
    let records: Vec<(String, SliceRecord)> = records
        .into_iter()
        .map(|(n, r)| {
            if (r.height(), r.width()) == (args.size, args.size) {
                Ok((n, r))
            } else {
                resize_slice(&r, args.size, args.size).map(|r| (n, r))
            }
        })
        .collect::<Result<_, Error>>()?;

    let slices: Vec<SliceRecord> = records.iter().map(|(_, r)| r.clone()).collect();
    let assignment = match split_dataset(&slices, args.seed, args.test_fraction, args.validation_fraction) {
        Ok(s) => s.assignment(slices.len()),
        Err(Error::Split(why)) => {
            eprintln!("warning: {why}; every slice goes to the train split");
            vec![Some(Split::Train); slices.len()]
        }
        Err(e) => return Err(e.into()),
    };

    let images = args.output.join("images");
    let masks = args.output.join("masks");
    make_dir(&images)?;
    let mut entries = Vec::with_capacity(records.len());
    let mut splits = BTreeMap::new();
    for ((name, r), split) in records.iter().zip(assignment) {
        let split = split.expect("every record is assigned");
        let file = format!("{name}.png");
        write_gray(&images.join(&file), r.image.plane(0, 0), r.height(), r.width())?;
        let mask_path = match &r.mask {
            Some(m) => {
                write_mask(&masks.join(&file), m)?;
                Some(PathBuf::from("masks").join(&file))
            }
            None => None,
        };
        *splits
            .entry(match split {
                Split::Train => "train",
                Split::Validation => "validation",
                Split::Test => "test",
            })
            .or_insert(0) += 1;
        entries.push(ManifestEntry {
            id: format!("{}:{}", r.provenance.volume, r.provenance.slice),
            path: PathBuf::from("images").join(&file),
            label: r.label,
            split,
            mask_path,
        });
    }
    let manifest = args.output.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    let covid = entries.iter().filter(|e| e.label == Label::Covid).count();
    let summary = Summary {
        records: entries.len(),
        healthy: entries.len() - covid,
        covid,
        splits,
        manifest,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
