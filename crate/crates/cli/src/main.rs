use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use wsfcn::config::ExperimentConfig;
use wsfcn::data::pnm::{read_ppm, write_pgm, write_ppm, GrayImage, RgbImage};
use wsfcn::data::{image_tensor, synth, synth_dataset};
use wsfcn::ensemble::{ensemble_infer, predict_labels, EnsembleConfig, EvalOptions};
use wsfcn::harness::{ensure_dataset, run_ablation, run_eval, run_train, REPORT};
use wsfcn::tensor::DType;
use wsfcn::{Error, Variant};

/// Weakly supervised segmentation on synthetic shapes.
#[derive(Parser, Debug)]
#[command(name = "wsfcn", version, about)]
struct Cli {
    /// Experiment configuration ("key = value" lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset into --out.
    Synth {
        #[arg(long, default_value_t = 200)]
        n_train: usize,
        #[arg(long, default_value_t = 50)]
        n_val: usize,
    },
    /// Train one variant; the dataset is generated first if missing.
    Train {
        #[arg(long)]
        variant: Option<Variant>,
        /// Seed of the generated dataset.
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
    },
    /// Evaluate a checkpoint on the val split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root; defaults to the checkpoint's configured dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        /// Remove masks of classes absent from the image labels.
        #[arg(long)]
        filter_fp: bool,
        /// Reject checkpoints of any other variant.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Train and evaluate variants over seeds and tabulate the results.
    Ablate {
        #[arg(long, value_delimiter = ',', default_values_t = Variant::ABLATION)]
        variants: Vec<Variant>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        /// all, tensor, fca, sf2 or segnet.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Predict the label map of one PPM image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        ensemble: EnsembleArgs,
    },
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Comma-separated inference scales.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
    scales: Vec<f64>,
    /// Average with horizontally flipped passes.
    #[arg(long)]
    flip: bool,
    /// Shorthand for scales 1,0.5,1.5,2 with flip.
    #[arg(long, conflicts_with_all = ["scales", "flip"])]
    multi_scale: bool,
}

impl EnsembleArgs {
    fn config(&self) -> EnsembleConfig {
        if self.multi_scale {
            EnsembleConfig::multi_scale()
        } else {
            EnsembleConfig {
                scales: self.scales.clone(),
                flip: self.flip,
            }
        }
    }
}

const PALETTE: [[u8; 3]; synth::CLASSES + 1] = [[0, 0, 0], [220, 60, 60], [60, 180, 75], [70, 110, 230], [240, 200, 40]];

fn experiment(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, cli.seed)?,
        None => {
            let seed = cli
                .seed
                .ok_or_else(|| Error::Config("`seed` is mandatory (pass --seed or --config)".into()))?;
            ExperimentConfig::with_seed(seed)
        }
    };
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn required_out(cli: &Cli) -> anyhow::Result<&Path> {
    Ok(cli
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))?)
}

/// Dataset of the run a checkpoint belongs to: from --config, or from the
/// run's own config.txt next to the checkpoint directory.
fn run_dataset(cli: &Cli, checkpoint: &Path) -> anyhow::Result<PathBuf> {
    if let Some(path) = &cli.config {
        return Ok(ExperimentConfig::load(path, Some(cli.seed.unwrap_or(0)))?.dataset);
    }
    let run_config = checkpoint.parent().map(|p| p.join("config.txt"));
    match run_config.filter(|p| p.exists()) {
        Some(p) => Ok(ExperimentConfig::load(&p, None)?.dataset),
        None => Err(Error::Config("cannot locate the dataset; pass --dataset".into()).into()),
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Synth { n_train, n_val } => {
            let out = required_out(cli)?;
            let seed = match (&cli.config, cli.seed) {
                (_, Some(s)) => s,
                (Some(_), None) => experiment(cli)?.seed,
                (None, None) => return Err(Error::Config("`seed` is mandatory (pass --seed)".into()).into()),
            };
            let manifest = synth_dataset(out, *n_train, *n_val, seed)?;
            println!("wrote {} samples to {}", manifest.len(), out.display());
        }
        Command::Train { variant, data_seed } => {
            let mut cfg = experiment(cli)?;
            if let Some(v) = variant {
                cfg.model.variant = *v;
            }
            cfg.validate()?;
            ensure_dataset(&cfg.dataset, cfg.n_train, cfg.n_val, *data_seed)?;
            let summary = run_train(&cfg)?;
            let (first, last) = summary.cls_loss_first_last(wsfcn::harness::steps_per_epoch(
                cfg.n_train,
                cfg.batch_size,
            ));
            println!(
                "trained {} ({} params) for {} steps; classification loss {first:.4} -> {last:.4}",
                cfg.model.variant,
                summary.num_params,
                summary.log.len()
            );
            println!("checkpoint: {}", summary.final_checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            ensemble,
            filter_fp,
            variant,
        } => {
            let dataset = match dataset {
                Some(d) => d.clone(),
                None => run_dataset(cli, checkpoint)?,
            };
            let opts = EvalOptions {
                ensemble: ensemble.config(),
                filter_fp: *filter_fp,
            };
            let report_path = cli.out.as_ref().map(|o| o.join(REPORT));
            let report = run_eval(checkpoint, &dataset, &opts, *variant, report_path.as_deref())?;
            print!("{}", report.to_text());
        }
        Command::Ablate {
            variants,
            seeds,
            data_seed,
        } => {
            let cfg = experiment(cli)?;
            cfg.validate()?;
            let out = cli.out.clone().unwrap_or_else(|| cfg.output.clone());
            ensure_dataset(&cfg.dataset, cfg.n_train, cfg.n_val, *data_seed)?;
            let table = run_ablation(&cfg, variants, seeds, &out, |r| {
                println!(
                    "{} seed {}: mIoU {:.2}% PixAcc {:.2}%",
                    r.variant,
                    r.seed,
                    100.0 * r.miou,
                    100.0 * r.pixacc
                )
            })?;
            let path = out.join("ablation.txt");
            fs::write(&path, table.to_text()).with_context(|| format!("writing {}", path.display()))?;
            print!("{}", table.to_pretty());
        }
        Command::Gradcheck { scope, seeds } => {
            let results = wsfcn::gradcheck::run_gradcheck(scope, *seeds, |r| println!("{}", r.to_line()))?;
            let failed = results.iter().filter(|r| !r.passed()).count();
            println!("{} suites, {failed} failed", results.len());
            return Ok(failed == 0);
        }
        Command::Infer {
            checkpoint,
            image,
            ensemble,
        } => {
            let out = required_out(cli)?;
            let ck = wsfcn::checkpoint::load_checkpoint(checkpoint, None)?;
            let img = read_ppm(image)?;
            let x = image_tensor(&img, DType::F32)?;
            let masks = ensemble_infer(&ck.store, &x, &ck.config.model, &ensemble.config())?;
            let labels = predict_labels(&masks, img.height, img.width)?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let mask = GrayImage {
                width: img.width,
                height: img.height,
                data: labels.clone(),
            };
            write_pgm(&out.join(format!("{stem}_mask.pgm")), &mask)?;
            let mut color = RgbImage::new(img.width, img.height);
            for (i, &l) in labels.iter().enumerate() {
                let c = PALETTE.get(l as usize).copied().unwrap_or([255, 255, 255]);
                color.data[i * 3..i * 3 + 3].copy_from_slice(&c);
            }
            write_ppm(&out.join(format!("{stem}_color.ppm")), &color)?;
            let mut present: Vec<u8> = labels.iter().copied().filter(|&l| l > 0).collect();
            present.sort_unstable();
            present.dedup();
            let names: Vec<_> = present.iter().map(|&c| synth::CLASS_NAMES[c as usize]).collect();
            println!("predicted classes: {}", if names.is_empty() { "none".into() } else { names.join(", ") });
        }
    }
    Ok(true)
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
