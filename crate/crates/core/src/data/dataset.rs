//! On-disk dataset layout and in-memory samples.
//!
//! ```text
//! root/manifest.txt            split image mask labels
//! root/{split}/labels.txt      "0000.ppm: 1,3"
//! root/{split}/images/0000.ppm
//! root/{split}/masks/0000.pgm
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use wsfcn_tensor::{DType, Shape, Tensor};

use super::pnm::{read_pgm, read_ppm, write_pgm, write_ppm, GrayImage, RgbImage};
use super::synth::{self, present_classes};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const LABELS: &str = "labels.txt";
/// Side length of generated images.
pub const IMAGE_SIZE: usize = 80;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: RgbImage,
    /// Sorted present foreground classes.
    pub labels: Vec<u8>,
    /// Ground truth; read for evaluation only.
    pub mask: Option<GrayImage>,
}

impl Sample {
    /// Multi-hot `1×C×1×1` label vector.
    pub fn label_tensor(&self, classes: usize) -> Result<Tensor> {
        label_tensor(&self.labels, classes)
    }
}

pub fn label_tensor(labels: &[u8], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; classes];
    for &c in labels {
        if c == 0 || c as usize > classes {
            return Err(Error::Invalid(format!("label {c} outside 1..={classes}")));
        }
        data[c as usize - 1] = 1.0;
    }
    Ok(Tensor::new(Shape::new(1, classes, 1, 1)?, DType::F64, data)?)
}

/// Maps a byte to the network's input range, `(v / 255 − 0.5) / 0.25`.
pub fn normalize(v: u8) -> f64 {
    (v as f64 / 255.0 - 0.5) / 0.25
}

/// `1×3×H×W` normalised image tensor.
pub fn image_tensor(img: &RgbImage, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_fn(
        Shape::new(1, 3, img.height, img.width)?,
        dtype,
        |_, c, y, x| normalize(img.data[(y * img.width + x) * 3 + c]),
    ))
}

fn format_labels(labels: &[u8]) -> String {
    labels.iter().map(u8::to_string).collect::<Vec<_>>().join(",")
}

fn parse_labels(s: &str) -> Result<Vec<u8>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let mut out: Vec<u8> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::format("labels file", format!("bad class id `{t}`")))
        })
        .collect::<Result<_>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Manifest record of one generated sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: String,
    pub image: String,
    pub mask: String,
    pub labels: Vec<u8>,
}

/// Generates `n_train` + `n_val` samples under `root` and returns the
/// manifest. Output bytes depend only on the arguments.
pub fn synth_dataset(root: &Path, n_train: usize, n_val: usize, seed: u64) -> Result<Vec<ManifestEntry>> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::Config("n_train and n_val must be at least 1".into()));
    }
    let mut manifest = Vec::new();
    for (split_id, (split, count)) in [(Split::Train, n_train), (Split::Val, n_val)].into_iter().enumerate() {
        let dir = root.join(split.name());
        create_dir(&dir.join("images"))?;
        create_dir(&dir.join("masks"))?;
        let mut labels_txt = String::new();
        for i in 0..count {
            let mut rng = synth::sample_rng(seed, split_id as u64, i as u64);
            let (image, mask, labels) = synth::generate(IMAGE_SIZE, &mut rng);
            let stem = format!("{i:04}");
            write_ppm(&dir.join("images").join(format!("{stem}.ppm")), &image)?;
            write_pgm(&dir.join("masks").join(format!("{stem}.pgm")), &mask)?;
            writeln!(labels_txt, "{stem}.ppm: {}", format_labels(&labels)).unwrap();
            manifest.push(ManifestEntry {
                split: split.name().into(),
                image: format!("{}/images/{stem}.ppm", split.name()),
                mask: format!("{}/masks/{stem}.pgm", split.name()),
                labels,
            });
        }
        write_text(&dir.join(LABELS), &labels_txt)?;
    }
    let mut text = format!("# synthetic shapes, seed {seed}, classes {}\n", synth::CLASSES);
    for e in &manifest {
        writeln!(text, "{} {} {} {}", e.split, e.image, e.mask, format_labels(&e.labels)).unwrap();
    }
    write_text(&root.join(MANIFEST), &text)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let text = read_text(&root.join(MANIFEST))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|line| {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [split, image, mask, labels] = fields[..] else {
                return Err(Error::format("manifest", format!("expected 4 fields in `{line}`")));
            };
            Ok(ManifestEntry {
                split: split.into(),
                image: image.into(),
                mask: mask.into(),
                labels: parse_labels(labels)?,
            })
        })
        .collect()
}

/// Parses a split's `labels.txt` into `(file name, classes)` pairs.
pub fn read_labels(path: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let (name, labels) = line
                .split_once(':')
                .ok_or_else(|| Error::format("labels file", format!("missing `:` in `{line}`")))?;
            Ok((name.trim().to_string(), parse_labels(labels)?))
        })
        .collect()
}

/// Loads a split. Ground-truth masks are read only when `with_masks` is set.
pub fn load_split(root: &Path, split: Split, with_masks: bool) -> Result<Vec<Sample>> {
    let dir = root.join(split.name());
    read_labels(&dir.join(LABELS))?
        .into_iter()
        .map(|(name, labels)| {
            let image = read_ppm(&dir.join("images").join(&name))?;
            let mask = if with_masks {
                let stem = name.strip_suffix(".ppm").unwrap_or(&name);
                let m = read_pgm(&dir.join("masks").join(format!("{stem}.pgm")))?;
                if (m.width, m.height) != (image.width, image.height) {
                    return Err(Error::format("mask", format!("{name}: extents differ from the image")));
                }
                Some(m)
            } else {
                None
            };
            Ok(Sample {
                name,
                image,
                labels,
                mask,
            })
        })
        .collect()
}

/// Recomputes every label set from its mask; returns the offending files.
pub fn verify_dataset(root: &Path) -> Result<Vec<PathBuf>> {
    let mut bad = Vec::new();
    for e in read_manifest(root)? {
        let mask = read_pgm(&root.join(&e.mask))?;
        if present_classes(&mask) != e.labels {
            bad.push(root.join(&e.mask));
        }
    }
    Ok(bad)
}
