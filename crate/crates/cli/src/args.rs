//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparq_core::{LearnConfig, SparqParams, TrainConfig};

use crate::manifest::Polarity;

#[derive(Debug, Parser)]
#[command(name = "sparq", version, about = "Sparse-representation image quality assessment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory holding trained dictionaries.
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,

    /// Report format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn one dictionary per reference image and store it in the cache.
    Train(TrainArgs),
    /// Score one distorted image against its reference.
    Score(ScoreArgs),
    /// Score a dataset manifest and report agreement with subjective scores.
    Evaluate(EvaluateArgs),
    /// SROCC of a dataset as a function of the salient fraction.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// Patch side length in pixels.
    #[arg(long, default_value_t = 11)]
    pub patch_side: usize,
    /// Training patches drawn per reference.
    #[arg(long, default_value_t = 3000)]
    pub train_patches: usize,
    /// Dictionary size.
    #[arg(long, default_value_t = 242)]
    pub atoms: usize,
    /// Nonzeros per sparse code.
    #[arg(long, default_value_t = 12)]
    pub sparsity: usize,
    /// K-SVD rounds.
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    /// Stabilizing constant of the patch similarity.
    #[arg(long, default_value_t = 0.01)]
    pub c: f64,
    /// Fraction of highest-entropy patches that are compared.
    #[arg(long, default_value_t = 0.15)]
    pub salient_fraction: f64,
    /// Seed for training-patch sampling and dictionary initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Default for ParamArgs {
    fn default() -> Self {
        let learn = LearnConfig::default();
        let sparq = SparqParams::default();
        Self {
            patch_side: learn.patch_side,
            train_patches: TrainConfig::default().train_patches,
            atoms: learn.atoms,
            sparsity: learn.sparsity,
            iterations: learn.iterations,
            c: sparq.c,
            salient_fraction: sparq.salient_fraction,
            seed: learn.seed,
        }
    }
}

impl ParamArgs {
    pub fn sparq(&self) -> SparqParams {
        SparqParams {
            c: self.c,
            tau: self.sparsity,
            salient_fraction: self.salient_fraction,
            patch_side: self.patch_side,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learn: LearnConfig {
                atoms: self.atoms,
                sparsity: self.sparsity,
                iterations: self.iterations,
                seed: self.seed,
                patch_side: self.patch_side,
                min_improvement: None,
            },
            train_patches: self.train_patches,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Reference images.
    #[arg(required_unless_present = "manifest", conflicts_with = "manifest")]
    pub images: Vec<PathBuf>,
    /// Train every reference listed in a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write the dictionary of a single image to this file instead of the cache.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub reference: PathBuf,
    pub distorted: PathBuf,
    /// Use this dictionary instead of the cache or on-the-fly training.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Also report PSNR in dB.
    #[arg(long)]
    pub with_psnr: bool,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub manifest: PathBuf,
    /// Orientation of the subjective scores.
    #[arg(long, value_enum, default_value_t = Polarity::HigherIsBetter)]
    pub polarity: Polarity,
    /// Evaluate PSNR alongside SPARQ.
    #[arg(long)]
    pub with_psnr: bool,
    /// Write per-record scores as CSV to this file.
    #[arg(long, value_name = "FILE")]
    pub records: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub manifest: PathBuf,
    /// Salient fractions, comma separated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub fractions: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Polarity::HigherIsBetter)]
    pub polarity: Polarity,
    #[command(flatten)]
    pub params: ParamArgs,
}
