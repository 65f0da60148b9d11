//! Command-line front end: train / eval / distill / inspect-bank / gen-data.

use clap::{Args, Parser, Subcommand};
use movit::config::RunConfig;
use movit::data::{export_png_tree, generate_synthetic_dataset, Generator, SyntheticDatasetSpec};
use movit::pal::MmdVariant;
use movit::run::{
    inspect_artifact, run_distill, run_eval, run_train, StoreChoice,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "movit",
    about = "Memorizing vision transformer: train, evaluate, and distill external attention memory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value config file; flags below override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training / shuffling / init seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Stratified fraction of the training set to use, in (0, 1].
    #[arg(long)]
    data_fraction: Option<f64>,
    /// Enable or disable the memorizing layer.
    #[arg(long, value_enum)]
    movit: Option<Switch>,
    /// Neighbors retrieved per query.
    #[arg(long)]
    knn_k: Option<usize>,
    /// Which side of the moving average the schedule coefficient weights.
    #[arg(long)]
    ema_orientation: Option<String>,
    /// Additional `key=value` config overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> movit::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(f) = self.data_fraction {
            cfg.train.data_fraction = f;
        }
        if let Some(k) = self.knn_k {
            cfg.train.knn_k = k;
        }
        if let Some(o) = &self.ema_orientation {
            cfg.train.ema_orientation = o.parse()?;
        }
        match self.movit {
            Some(Switch::Off) => cfg.vit.movit_layer = None,
            Some(Switch::On) if cfg.vit.movit_layer.is_none() => {
                cfg.vit.movit_layer = Some(cfg.vit.depth - 1)
            }
            _ => {}
        }
        for pair in &self.set {
            let Some((key, value)) = pair.split_once('=') else {
                return Err(movit::MovitError::Config(format!(
                    "--set expects KEY=VALUE, got `{pair}`"
                )));
            };
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing checkpoint, bank, and metrics files.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for artifacts.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Save the effective config here before training.
        #[arg(long)]
        write_config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Full memory bank file.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Distilled prototype file (alternative to --bank).
        #[arg(long)]
        prototypes: Option<PathBuf>,
        /// Directory for a metrics record; omit to print only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distill a bank file into prototypes.
    Distill {
        /// Source bank file.
        #[arg(long)]
        bank: PathBuf,
        /// Destination prototype file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num_classes: usize,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Prototypes per class.
        #[arg(long, default_value_t = 32)]
        multiplier: usize,
        #[arg(long, default_value = "standard")]
        mmd_variant: String,
    },
    /// Summarize a bank, prototype, or checkpoint file.
    InspectBank {
        path: PathBuf,
    },
    /// Generate a synthetic dataset as a PNG class tree.
    GenData {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        num_classes: usize,
        #[arg(long, default_value_t = 200)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, default_value_t = 0.3)]
        noise_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "textures")]
        generator: String,
    },
}

fn main() {
    if let Err(err) = dispatch(Cli::parse()) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> movit::Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            write_config,
        } => {
            let cfg = config.build()?;
            if let Some(path) = write_config {
                std::fs::write(&path, cfg.to_kv())
                    .map_err(|e| movit::MovitError::io(path.display().to_string(), e))?;
            }
            let outcome = run_train(&cfg, &out, false)?;
            let m = &outcome.record.final_test;
            println!(
                "final test: accuracy {:.4}  auc {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  loss {:.4}",
                m.accuracy, m.auc, m.precision, m.recall, m.f1, m.loss
            );
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            if let Some(bank) = &outcome.bank_path {
                println!("bank: {}", bank.display());
            }
            println!("metrics: {}", outcome.metrics_path.display());
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            bank,
            prototypes,
            out,
        } => {
            let cfg = config.build()?;
            let store = match (bank, prototypes) {
                (Some(_), Some(_)) => {
                    return Err(movit::MovitError::Config(
                        "pass either --bank or --prototypes, not both".into(),
                    ))
                }
                (Some(b), None) => StoreChoice::Bank(b),
                (None, Some(p)) => StoreChoice::Prototypes(p),
                (None, None) => StoreChoice::None,
            };
            let m = run_eval(&checkpoint, &store, &cfg, out.as_deref())?;
            println!(
                "accuracy {:.4}  auc {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  loss {:.4}",
                m.accuracy, m.auc, m.precision, m.recall, m.f1, m.loss
            );
            Ok(())
        }
        Command::Distill {
            bank,
            out,
            num_classes,
            tau,
            multiplier,
            mmd_variant,
        } => {
            let variant: MmdVariant = mmd_variant.parse()?;
            let report = run_distill(&bank, &out, num_classes, tau, multiplier, variant)?;
            println!(
                "distilled {} facts into {} prototypes (ratio {:.3})",
                report.facts, report.prototypes, report.compression_ratio
            );
            println!(
                "mmd² first-{} baseline {:.6} -> greedy selection {:.6}",
                report.prototypes, report.mmd_naive, report.mmd_selected
            );
            println!("wrote {}", report.out_path.display());
            Ok(())
        }
        Command::InspectBank { path } => {
            print!("{}", inspect_artifact(&path)?);
            Ok(())
        }
        Command::GenData {
            out,
            num_classes,
            samples_per_class,
            image_size,
            noise_std,
            seed,
            generator,
        } => {
            let generator: Generator = generator.parse()?;
            let spec = SyntheticDatasetSpec {
                num_classes,
                samples_per_class,
                image_size,
                noise_std,
                seed,
                generator,
            };
            for (split, per_class, seed_offset) in
                [("train", samples_per_class, 0u64), ("test", samples_per_class / 4, 1)]
            {
                let split_spec = SyntheticDatasetSpec {
                    samples_per_class: per_class.max(1),
                    seed: seed + seed_offset,
                    ..spec.clone()
                };
                let ds = generate_synthetic_dataset(&split_spec)?;
                let dir = out.join(split);
                let n = export_png_tree(&ds, &dir)?;
                println!("wrote {n} images under {}", dir.display());
            }
            Ok(())
        }
    }
}
