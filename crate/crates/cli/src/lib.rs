//! The `oce` command line: preprocess, train, infer, eval and kernel dumps.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 I/O or file
//! format error, 3 numeric failure.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use oce_net::{Config, Error};

#[derive(Parser, Debug)]
#[command(name = "oce", version, about = "Orientation-aware retinal vessel segmentation")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable, wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on a dataset directory with `images/` and `labels/`.
    Train(TrainArgs),
    /// Segment images with a trained checkpoint.
    Infer(InferArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Write the Gabor kernels as PNGs.
    GaborDump(GaborArgs),
    /// Write preprocessed images as PNGs.
    Preprocess(PreprocessArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patches: Option<usize>,
    /// Ablation setting; `fusion_mode` also sets the module flags it implies.
    #[arg(long, value_name = "KEY=VALUE")]
    pub ablate: Vec<String>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A PNG file or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "pred")]
    pub out: PathBuf,
    /// Also write the image with vessels painted green.
    #[arg(long)]
    pub overlay: bool,
    /// Also write the low/medium/high confidence regions of the refinement stage.
    #[arg(long)]
    pub dump_uarm_regions: bool,
    /// Also write the learned orientation kernels.
    #[arg(long)]
    pub dump_gabor: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Binary prediction masks.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Probability maps; without them AUC is reported as NA.
    #[arg(long)]
    pub prob: Option<PathBuf>,
    /// Field-of-view masks restricting the pixel metrics.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Also score thin and thick vessels separately.
    #[arg(long)]
    pub thin: bool,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GaborArgs {
    #[arg(long, default_value = "gabor")]
    pub out: PathBuf,
    /// Dump the learned modulation of this checkpoint instead of the raw bank.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Pixels per kernel tap in the written images.
    #[arg(long, default_value_t = 16)]
    pub scale: usize,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "preprocessed")]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) => 1,
        Error::Io { .. } | Error::Format { .. } => 2,
        Error::Numeric { .. } | Error::Engine { .. } => 3,
    }
}

fn split_pair(s: &str) -> oce_net::Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{s}`")))
}

/// File, then `OCE_SEED`, then `--set` overrides.
pub fn resolve_config(
    file: Option<&std::path::Path>,
    env_seed: Option<&str>,
    overrides: &[String],
) -> oce_net::Result<Config> {
    let mut cfg = match file {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = env_seed {
        cfg.set("seed", seed).map_err(|e| Error::Config(format!("OCE_SEED: {e}")))?;
    }
    for o in overrides {
        let (k, v) = split_pair(o)?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(args: I, env_seed: Option<&str>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(&cli, env_seed) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
