//! `usfmae`: batch front end for the preprocessing, pretraining,
//! fine-tuning and evaluation pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use usfmae_core::corpus::Split;

use crate::config::{config_help, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "usfmae", version, about = "Ultrasound masked-autoencoder pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON run configuration (see the key list below).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for all artifacts.
    #[arg(long, global = true, default_value = "usfmae-run")]
    out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the fused annotation masks during preprocess.
    #[arg(long, global = true)]
    debug_masks: bool,
    /// More progress output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean every image of a manifest and write PNGs, report.json and manifest.csv.
    Preprocess {
        manifest: PathBuf,
    },
    /// Masked-autoencoder pretraining on the images of a manifest.
    Pretrain {
        manifest: PathBuf,
        /// Restrict to one split (default: every record).
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        /// Continue from a checkpoint saved with pretrain.full_state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train a classification head on top of a pretrained encoder.
    Finetune {
        checkpoint: PathBuf,
        manifest: PathBuf,
        /// Pick learning rate and weight decay by cross-validated loss first.
        #[arg(long)]
        grid_search: bool,
    },
    /// Metrics JSON, predictions and ROC/PR curves for a classifier.
    Eval {
        checkpoint: PathBuf,
        manifest: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// Original / masked / reconstructed triptych for one image.
    Reconstruct {
        checkpoint: PathBuf,
        image: PathBuf,
        /// Fraction of patches to hide (default: the checkpoint's ratio).
        #[arg(long)]
        mask_ratio: Option<f64>,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|()| format!("unknown split {s:?} (expected train, val or test)"))
}

/// Resolved settings shared by all commands.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub verbosity: u8,
}

impl Ctx {
    pub fn info(&self, msg: impl AsRef<str>) {
        if self.verbosity >= 1 {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn detail(&self, msg: impl AsRef<str>) {
        if self.verbosity >= 2 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn resolve(global: &GlobalArgs) -> Result<Ctx> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if global.debug_masks {
        cfg.debug_masks = true;
    }
    cfg.propagate_seed();
    cfg.validate()?;
    std::fs::create_dir_all(&global.out).with_context(|| format!("creating {}", global.out.display()))?;
    cfg.write_resolved(&global.out)?;
    Ok(Ctx {
        cfg,
        out: global.out.clone(),
        verbosity: if global.quiet { 0 } else { 1 + global.verbose },
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = resolve(&cli.global)?;
    match cli.command {
        Command::Preprocess { manifest } => commands::preprocess(&ctx, &manifest),
        Command::Pretrain { manifest, split, resume } => commands::pretrain(&ctx, &manifest, split, resume.as_deref()),
        Command::Finetune {
            checkpoint,
            manifest,
            grid_search,
        } => commands::finetune(&ctx, &checkpoint, &manifest, grid_search),
        Command::Eval {
            checkpoint,
            manifest,
            split,
        } => commands::eval(&ctx, &checkpoint, &manifest, split),
        Command::Reconstruct {
            checkpoint,
            image,
            mask_ratio,
        } => commands::reconstruct(&ctx, &checkpoint, &image, mask_ratio),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_long_help(config_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
