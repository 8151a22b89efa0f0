#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbstm_core::data::io::write_gray;
use cbstm_core::RngState;

pub fn cbstm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbstm"))
        .args(args)
        .env("CBSTM_THREADS", "2")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// A bright disc on a dim background and its mask, as H×W planes.
pub fn disc(size: usize, cy: f64, cx: f64, r: f64) -> (Vec<f64>, Vec<f64>) {
    let mut img = vec![0.3; size * size];
    let mut mask = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            if dy * dy + dx * dx <= r * r {
                img[y * size + x] = 0.9;
                mask[y * size + x] = 1.0;
            }
        }
    }
    (img, mask)
}

/// `covid/` discs with masks and `healthy/` blanks in slice-mode layout.
/// Returns `(images_dir, masks_dir)`.
pub fn slice_fixture(root: &Path, per_class: usize, sizes: &[usize], seed: u64) -> (PathBuf, PathBuf) {
    let images = root.join("raw");
    let masks = root.join("raw_masks");
    let mut rng = RngState::new(seed);
    for i in 0..per_class {
        let size = sizes[i % sizes.len()];
        let s = size as f64;
        let r = rng.uniform(0.2, 0.3) * s;
        let cy = rng.uniform(r + 1.0, s - r - 1.0);
        let cx = rng.uniform(r + 1.0, s - r - 1.0);
        let (img, mask) = disc(size, cy, cx, r);
        let name = format!("img{i:03}.png");
        write_gray(&images.join("covid").join(&name), &img, size, size).unwrap();
        write_gray(&masks.join("covid").join(&name), &mask, size, size).unwrap();
        write_gray(&images.join("healthy").join(&name), &vec![0.3; size * size], size, size).unwrap();
    }
    (images, masks)
}

/// Small detection network config at 64×64 with augmentation off.
pub const DETECT_CONFIG: &str = r#"{
  "model": {
    "input_size": [64, 64],
    "stem_width": 4,
    "stages": [
      {"branch_width": 4, "output_width": 16},
      {"branch_width": 16, "output_width": 32},
      {"branch_width": 32, "output_width": 64}
    ]
  },
  "hyper_params": {"augment": false}
}"#;

/// Small segmentation network config at 32×32 with augmentation off.
pub const SEG_CONFIG: &str = r#"{
  "model": {"input_size": [32, 32], "encoder_widths": [8, 16, 32]},
  "hyper_params": {"augment": false}
}"#;

/// Writes both configs and a sliced manifest under `root`.
pub struct Prepared {
    pub manifest: PathBuf,
    pub detect_config: PathBuf,
    pub seg_config: PathBuf,
}

pub fn prepare(root: &Path, per_class: usize) -> Prepared {
    let (images, masks) = slice_fixture(root, per_class, &[64], 11);
    let sliced = root.join("sliced");
    let out = cbstm(&[
        "slice",
        "--input",
        p(&images),
        "--mask-dir",
        p(&masks),
        "--output",
        p(&sliced),
        "--size",
        "64",
        "--seed",
        "5",
    ]);
    assert_eq!(code(&out), 0, "slice failed: {}", stderr(&out));
    let detect_config = root.join("detect.json");
    let seg_config = root.join("seg.json");
    std::fs::write(&detect_config, DETECT_CONFIG).unwrap();
    std::fs::write(&seg_config, SEG_CONFIG).unwrap();
    Prepared {
        manifest: sliced.join("manifest.jsonl"),
        detect_config,
        seg_config,
    }
}
