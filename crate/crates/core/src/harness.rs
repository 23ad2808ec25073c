//! Training, evaluation and ablation orchestration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsfcn_tensor::{DType, Tensor};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::data::dataset::{read_manifest, MANIFEST};
use crate::data::{image_tensor, load_split, synth_dataset, AugmentDraw, Sample, Split};
use crate::ensemble::{evaluate, EvalOptions};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{init_params, Variant};
use crate::optim::Sgd;
use crate::segnet::{train_step, Phase, TrainOptions};

pub const LOG_HEADER: &str = "step, phase, loss_cls, loss_seg, lr";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final";
pub const REPORT: &str = "metrics.txt";

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

/// Generates the dataset unless `root` already holds a manifest.
pub fn ensure_dataset(root: &Path, n_train: usize, n_val: usize, seed: u64) -> Result<()> {
    if root.join(MANIFEST).exists() {
        read_manifest(root)?;
        return Ok(());
    }
    synth_dataset(root, n_train, n_val, seed).map(|_| ())
}

/// One logged optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss_cls: f64,
    pub loss_seg: Option<f64>,
    pub lr: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        let seg = self
            .loss_seg
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "-".into());
        format!(
            "{}, {}, {:.6}, {seg}, {:.8}",
            self.step,
            self.phase.name(),
            self.loss_cls,
            self.lr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub output: PathBuf,
    pub final_checkpoint: PathBuf,
    pub log: Vec<LogRecord>,
    pub num_params: usize,
}

impl TrainSummary {
    /// Mean classification loss over the first and the last epoch.
    pub fn cls_loss_first_last(&self, steps_per_epoch: usize) -> (f64, f64) {
        let k = steps_per_epoch.min(self.log.len()).max(1);
        let mean = |r: &[LogRecord]| r.iter().map(|l| l.loss_cls).sum::<f64>() / r.len() as f64;
        (mean(&self.log[..k]), mean(&self.log[self.log.len() - k..]))
    }
}

/// Images and labels of one augmented batch.
pub fn make_batch<R: rand::Rng>(
    samples: &[&Sample],
    cfg: &ExperimentConfig,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    let mut images = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        let img = image_tensor(&s.image, DType::F32)?;
        let d = img.shape();
        let draw = AugmentDraw::draw(d.h(), d.w(), &cfg.augment, rng)?;
        images.push(draw.apply(&img, cfg.augment.crop)?);
        labels.push(s.label_tensor(cfg.model.classes)?.to_dtype(DType::F32));
    }
    Ok((Tensor::stack_batch(&images)?, Tensor::stack_batch(&labels)?))
}

pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    (n / batch.min(n)).max(1)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains from scratch on the dataset's train split. Every output is a
/// function of the configuration and the dataset bytes.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let samples = load_split(&cfg.dataset, Split::Train, false)?;
    if samples.len() < 2 {
        return Err(Error::Config("the train split needs at least two images".into()));
    }
    let samples = &samples[..cfg.n_train.min(samples.len()).max(2)];
    let out = &cfg.output;
    io(out, fs::create_dir_all(out))?;
    io(out, fs::write(out.join("config.txt"), cfg.to_text()))?;

    let mut store = init_params(&cfg.model, cfg.seed, DType::F32)?;
    let num_params = store.num_scalars();
    let mut opt = Sgd::new(cfg.sgd.clone());
    let mut data_rng = stream(cfg.seed, 10);
    let mut gate_rng = stream(cfg.seed, 11);
    let batch = cfg.batch_size.min(samples.len());
    let per_epoch = steps_per_epoch(samples.len(), batch);
    let total = per_epoch * cfg.total_epochs;
    let opts = TrainOptions {
        seg_loss_refined: cfg.seg_loss_refined,
    };

    let mut log = Vec::with_capacity(total);
    let mut log_text = format!("{LOG_HEADER}\n");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.total_epochs {
        order.shuffle(&mut data_rng);
        let phase = if epoch < cfg.cls_epochs {
            Phase::ClsOnly
        } else {
            Phase::ClsPlusSeg
        };
        for b in 0..per_epoch {
            let picked: Vec<&Sample> = order[b * batch..(b + 1) * batch].iter().map(|&i| &samples[i]).collect();
            let (images, labels) = make_batch(&picked, cfg, &mut data_rng)?;
            let step = epoch * per_epoch + b;
            let lr = cfg.lr_at(step, total);
            let r = train_step(&mut store, &mut opt, &images, &labels, phase, &cfg.model, opts, lr, &mut gate_rng)?;
            let rec = LogRecord {
                step,
                phase,
                loss_cls: r.loss_cls,
                loss_seg: r.loss_seg,
                lr,
            };
            writeln!(log_text, "{}", rec.to_line()).unwrap();
            log.push(rec);
        }
        let done = epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.total_epochs {
            save_checkpoint(&out.join(format!("epoch_{done:03}")), &store, cfg, done)?;
        }
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, &store, cfg, cfg.total_epochs)?;
    io(out, fs::write(out.join(TRAIN_LOG), log_text))?;
    Ok(TrainSummary {
        output: out.clone(),
        final_checkpoint,
        log,
        num_params,
    })
}

/// Evaluates a checkpoint on the val split and writes the report to
/// `report_path` when given.
pub fn run_eval(
    checkpoint: &Path,
    dataset: &Path,
    opts: &EvalOptions,
    expected: Option<Variant>,
    report_path: Option<&Path>,
) -> Result<MetricsReport> {
    opts.ensemble.validate()?;
    let ck = load_checkpoint(checkpoint, expected)?;
    let samples = load_split(dataset, Split::Val, true)?;
    let cm = evaluate(&ck.store, &samples, &ck.config.model, opts)?;
    let report = MetricsReport::from_matrix(&cm)?;
    if let Some(p) = report_path {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            io(dir, fs::create_dir_all(dir))?;
        }
        io(p, fs::write(p, report.to_text()))?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub num_params: usize,
    pub miou: f64,
    pub pixacc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub num_params: usize,
    pub miou: Summary,
    pub pixacc: Summary,
    pub runs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        Summary {
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
            min: xs.iter().cloned().fold(f64::INFINITY, f64::min),
            max: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

pub const ABLATION_HEADER: &str = "variant, params, miou_mean, miou_range, pixacc_mean, pixacc_range, runs";

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// One line per variant: means and ranges (max − min) over seeds, in
    /// percent.
    pub fn to_text(&self) -> String {
        let mut out = format!("{ABLATION_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{}, {}, {:.2}, {:.2}, {:.2}, {:.2}, {}",
                r.variant,
                r.num_params,
                100.0 * r.miou.mean,
                100.0 * r.miou.range(),
                100.0 * r.pixacc.mean,
                100.0 * r.pixacc.range(),
                r.runs
            )
            .unwrap();
        }
        out
    }

    /// Human-readable `mean ± range` rendering.
    pub fn to_pretty(&self) -> String {
        let mut out = format!("{:<12} {:>9} {:>16} {:>16}\n", "variant", "params", "mIoU %", "PixAcc %");
        for r in &self.rows {
            writeln!(
                out,
                "{:<12} {:>9} {:>8.2} ± {:<5.2} {:>8.2} ± {:<5.2}",
                r.variant.name(),
                r.num_params,
                100.0 * r.miou.mean,
                100.0 * r.miou.range(),
                100.0 * r.pixacc.mean,
                100.0 * r.pixacc.range()
            )
            .unwrap();
        }
        out
    }
}

/// Trains and evaluates every `(variant, seed)` pair under `out`.
pub fn run_ablation(
    base: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    out: &Path,
    mut progress: impl FnMut(&AblationRun),
) -> Result<AblationTable> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    base.validate()?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &variant in variants {
        let mut mious = Vec::new();
        let mut accs = Vec::new();
        let mut num_params = 0;
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.model.variant = variant;
            cfg.seed = seed;
            cfg.checkpoint_every = 0;
            cfg.output = out.join(variant.name()).join(format!("seed_{seed}"));
            let summary = run_train(&cfg)?;
            let report = run_eval(
                &summary.final_checkpoint,
                &cfg.dataset,
                &cfg.eval,
                Some(variant),
                Some(&cfg.output.join(REPORT)),
            )?;
            let run = AblationRun {
                variant,
                seed,
                num_params: summary.num_params,
                miou: report.miou,
                pixacc: report.pixacc,
            };
            progress(&run);
            num_params = run.num_params;
            mious.push(run.miou);
            accs.push(run.pixacc);
            runs.push(run);
        }
        rows.push(AblationRow {
            variant,
            num_params,
            miou: Summary::of(&mious),
            pixacc: Summary::of(&accs),
            runs: seeds.len(),
        });
    }
    let table = AblationTable { rows, runs };
    io(out, fs::create_dir_all(out))?;
    io(out, fs::write(out.join("ablation.csv"), table.to_text()))?;
    Ok(table)
}
