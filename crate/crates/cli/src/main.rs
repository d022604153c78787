//! pixelwarden: poison, measure and defend against the single-pixel
//! training-data backdoor.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use pixelwarden::defense::DefenseFilter;

use crate::commands::DefenseMode;
use crate::config::ExperimentConfig;

// Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "pixelwarden",
    version,
    about = "Single-pixel training-data backdoor toolkit",
    after_help = "Set PIXELWARDEN_DATA_ROOT to give dataset paths a default root."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment config (TOML); omitted = built-in synthetic demo.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Force fully sequential execution for bit-reproducible runs.
    #[arg(long)]
    deterministic: bool,

    /// Stratified train/val subsample fraction (e.g. 0.2 for a fifth-scale run).
    #[arg(long)]
    subset: Option<f64>,

    /// Replace an existing output directory from a previous run.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write poisoned train/val/test PNG trees plus a replay manifest.
    Poison {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train baseline and attacked models, evaluate, and write the report.
    Experiment {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Re-evaluate a finished experiment behind one or more defenses.
    Defend {
        /// Directory written by `experiment`.
        #[arg(long)]
        run: PathBuf,

        /// Where the defense sits: filter test inputs, or sanitize and retrain.
        #[arg(long, value_enum, default_value = "test")]
        mode: DefenseMode,

        /// Median filter with the given (odd) window.
        #[arg(long)]
        median: Option<usize>,

        /// Gaussian smoothing with the given sigma.
        #[arg(long)]
        smooth: Option<f64>,

        /// Uniform intensity quantizer with the given step.
        #[arg(long)]
        quantize: Option<u8>,

        /// Random flip/translate augmentation seeded per image.
        #[arg(long)]
        augment: Option<u64>,
    },
    /// Scan a PNG tree for stationary single-pixel triggers.
    Detect {
        /// Dataset root: one subdirectory per class.
        #[arg(long)]
        data: PathBuf,

        /// Consistency threshold for flagging (0 flags everything).
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,

        /// Write the detection report JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,

        /// How many of the strongest findings to list.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Render the report of a finished experiment run.
    Report {
        /// Directory written by `experiment`.
        #[arg(long)]
        run: PathBuf,
    },
}

/// Built-in demo: overlapping synthetic classes at CIFAR-like shape.
const DEMO_CONFIG: &str = r#"
out_dir = "pixelwarden-demo"

[dataset]
kind = "synthetic"
style = "overlapping"
num_classes = 10
per_class = 150
test_per_class = 50

[plan]
class_a = 0
class_b = 1

[train]
parallel = true
"#;

fn resolve_config(common: &CommonOpts) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::from_toml(DEMO_CONFIG)?,
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(subset) = common.subset {
        config.subset_fraction = Some(subset);
    }
    if common.deterministic {
        config.train.parallel = false;
    }
    if common.overwrite {
        config.overwrite = true;
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Poison { common } => commands::cmd_poison(&resolve_config(&common)?),
        Command::Experiment { common } => {
            commands::cmd_run_experiment(&resolve_config(&common)?)
        }
        Command::Defend {
            run,
            mode,
            median,
            smooth,
            quantize,
            augment,
        } => {
            let mut defenses = Vec::new();
            if let Some(window) = median {
                defenses.push(DefenseFilter::Median { window });
            }
            if let Some(sigma) = smooth {
                defenses.push(DefenseFilter::Smooth { sigma });
            }
            if let Some(step) = quantize {
                defenses.push(DefenseFilter::Quantize { step });
            }
            if let Some(seed) = augment {
                defenses.push(DefenseFilter::Augment { seed });
            }
            if defenses.is_empty() {
                // Fall back to the run config's [[defense]] entries.
                let config = ExperimentConfig::load(&run.join("config.toml"))?;
                defenses = config.defense.clone();
            }
            commands::cmd_defend(&run, mode, &defenses)
        }
        Command::Detect {
            data,
            threshold,
            out,
            top,
        } => commands::cmd_detect(&data, threshold, out.as_deref(), top),
        Command::Report { run } => commands::cmd_report(&run),
    }
}

fn classify_error(err: &anyhow::Error) -> u8 {
    use pixelwarden::Error as E;
    if let Some(core) = err.downcast_ref::<E>() {
        return match core {
            E::Diverged { .. } => EXIT_DIVERGED,
            E::Io { .. }
            | E::Decode { .. }
            | E::Encode(_)
            | E::Format { .. }
            | E::EmptyDataset
            | E::EmptyClass { .. } => EXIT_DATA,
            E::InvalidArgument(_)
            | E::ShapeMismatch(_)
            | E::ClassOutOfRange { .. }
            | E::TamperOutOfBounds { .. }
            | E::Json(_) => EXIT_CONFIG,
        };
    }
    if err.downcast_ref::<toml::de::Error>().is_some() {
        return EXIT_CONFIG;
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return EXIT_DATA;
    }
    EXIT_CONFIG
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_error(&err))
        }
    }
}
