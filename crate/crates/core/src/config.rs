//! Experiment configuration: `key = value` lines with `#` comments.
//!
//! Unknown keys are rejected. `seed` has no default; it must come from the
//! file or from an explicit override.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::AugmentConfig;
use crate::ensemble::{EnsembleConfig, EvalOptions};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant, OUTPUT_STRIDE};
use crate::optim::SgdConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    /// Exponent of the polynomial learning-rate decay; 0 keeps it constant.
    pub lr_power: f64,
    pub batch_size: usize,
    pub cls_epochs: usize,
    pub total_epochs: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub seg_loss_refined: bool,
    pub eval: EvalOptions,
    pub n_train: usize,
    pub n_val: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub dataset: PathBuf,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale defaults with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            sgd: SgdConfig {
                lr: 0.01,
                ..SgdConfig::default()
            },
            lr_power: 0.9,
            batch_size: 8,
            cls_epochs: 7,
            total_epochs: 30,
            augment: AugmentConfig::default(),
            seed,
            seg_loss_refined: false,
            eval: EvalOptions {
                ensemble: EnsembleConfig::default(),
                filter_fp: false,
            },
            n_train: 200,
            n_val: 50,
            checkpoint_every: 10,
            dataset: PathBuf::from("data"),
            output: PathBuf::from("runs/default"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sgd.validate()?;
        self.eval.ensemble.validate()?;
        let a = &self.augment;
        if a.crop == 0 || a.crop % OUTPUT_STRIDE != 0 {
            return Err(Error::Config(format!("crop {} must be a positive multiple of {OUTPUT_STRIDE}", a.crop)));
        }
        if !(a.scale_min > 0.0 && a.scale_min <= a.scale_max) {
            return Err(Error::Config(format!(
                "scale range [{}, {}] is invalid",
                a.scale_min, a.scale_max
            )));
        }
        if !(0.0..=1.0).contains(&a.flip_prob) {
            return Err(Error::Config("flip_prob outside [0, 1]".into()));
        }
        if self.cls_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "cls_epochs {} exceeds total_epochs {}",
                self.cls_epochs, self.total_epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for batch statistics".into()));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Config("n_train and n_val must be positive".into()));
        }
        if !(self.lr_power >= 0.0 && self.lr_power.is_finite()) {
            return Err(Error::Config("lr_power must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate at `step` of `total` steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if self.lr_power == 0.0 || total == 0 {
            return self.sgd.lr;
        }
        self.sgd.lr * (1.0 - step as f64 / total as f64).powf(self.lr_power)
    }

    /// Every experiment key in canonical order. Paths are excluded so that
    /// the text identifies the experiment independently of where it runs.
    pub fn canonical_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("variant", m.variant.name().into());
        kv("classes", m.classes.to_string());
        kv("d2", m.d2.to_string());
        kv("kernel_sizes", join(&m.kernel_sizes));
        kv("separate_attention", m.separate_attention.to_string());
        kv("keep_prob", m.keep_prob.to_string());
        kv("tau", m.tau.to_string());
        kv("pamr_iterations", m.pamr.iterations.to_string());
        kv("pamr_dilations", join(&m.pamr.dilations));
        kv("pamr_temperature", m.pamr.temperature.to_string());
        kv("lr", self.sgd.lr.to_string());
        kv("lr_power", self.lr_power.to_string());
        kv("momentum", self.sgd.momentum.to_string());
        kv("weight_decay", self.sgd.weight_decay.to_string());
        kv("lr_multiplier", m.lr_multiplier.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("cls_epochs", self.cls_epochs.to_string());
        kv("total_epochs", self.total_epochs.to_string());
        kv("crop", self.augment.crop.to_string());
        kv("scale_min", self.augment.scale_min.to_string());
        kv("scale_max", self.augment.scale_max.to_string());
        kv("flip_prob", self.augment.flip_prob.to_string());
        kv("seed", self.seed.to_string());
        kv("seg_loss_refined", self.seg_loss_refined.to_string());
        kv("eval_scales", join(&self.eval.ensemble.scales));
        kv("eval_flip", self.eval.ensemble.flip.to_string());
        kv("eval_filter_fp", self.eval.filter_fp.to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_val", self.n_val.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        out
    }

    /// Canonical text plus the dataset and output paths.
    pub fn to_text(&self) -> String {
        format!(
            "{}dataset = {}\noutput = {}\n",
            self.canonical_text(),
            self.dataset.display(),
            self.output.display()
        )
    }

    /// Hex SHA-256 of [`Self::canonical_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }

    /// Parses `text`; `seed` overrides the file's seed and is required when
    /// the file has none.
    pub fn parse(text: &str, seed: Option<u64>) -> Result<Self> {
        let mut cfg = ExperimentConfig::with_seed(0);
        let mut file_seed = None;
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value, &mut file_seed).map_err(|e| match e {
                Error::Config(m) => err(m),
                other => other,
            })?;
        }
        cfg.seed = seed
            .or(file_seed)
            .ok_or_else(|| Error::Config("`seed` is mandatory (set it in the config or pass --seed)".into()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, seed)
    }

    fn set(&mut self, key: &str, v: &str, seed: &mut Option<u64>) -> Result<()> {
        let m = &mut self.model;
        match key {
            "variant" => m.variant = v.parse::<Variant>()?,
            "classes" => m.classes = num(key, v)?,
            "d2" => m.d2 = num(key, v)?,
            "kernel_sizes" => m.kernel_sizes = list(key, v)?,
            "separate_attention" => m.separate_attention = flag(key, v)?,
            "keep_prob" => m.keep_prob = num(key, v)?,
            "tau" => m.tau = num(key, v)?,
            "pamr_iterations" => m.pamr.iterations = num(key, v)?,
            "pamr_dilations" => m.pamr.dilations = list(key, v)?,
            "pamr_temperature" => m.pamr.temperature = num(key, v)?,
            "lr" => self.sgd.lr = num(key, v)?,
            "lr_power" => self.lr_power = num(key, v)?,
            "momentum" => self.sgd.momentum = num(key, v)?,
            "weight_decay" => self.sgd.weight_decay = num(key, v)?,
            "lr_multiplier" => m.lr_multiplier = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "cls_epochs" => self.cls_epochs = num(key, v)?,
            "total_epochs" => self.total_epochs = num(key, v)?,
            "crop" => self.augment.crop = num(key, v)?,
            "scale_min" => self.augment.scale_min = num(key, v)?,
            "scale_max" => self.augment.scale_max = num(key, v)?,
            "flip_prob" => self.augment.flip_prob = num(key, v)?,
            "seed" => *seed = Some(num(key, v)?),
            "seg_loss_refined" => self.seg_loss_refined = flag(key, v)?,
            "eval_scales" => self.eval.ensemble.scales = list(key, v)?,
            "eval_flip" => self.eval.ensemble.flip = flag(key, v)?,
            "eval_filter_fp" => self.eval.filter_fp = flag(key, v)?,
            "n_train" => self.n_train = num(key, v)?,
            "n_val" => self.n_val = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "dataset" => self.dataset = PathBuf::from(v),
            "output" => self.output = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|t| num(key, t.trim())).collect()
}
