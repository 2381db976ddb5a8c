//! `multiko` command-line driver.
//!
//! Every subcommand writes a `manifest.json` into `--out`, whether it
//! succeeds or not. Result files are only written on success.
//!
//! Exit codes: 0 ok, 2 configuration, 3 input I/O, 4 numerical failure,
//! 5 solver non-convergence.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::run;
use commands::{construct, report, score, select, simulate, tune};

#[derive(Debug, Parser)]
#[command(name = "multiko", version, about = "Multiple-knockoff variable selection")]
pub struct Cli {
    /// Master seed; every stochastic stage derives its own stream from it.
    /// For `simulate` it overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "multiko-out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build d knockoff copies of every column of X.
    Construct(construct::Args),
    /// Lasso entry scores of originals and knockoffs.
    Score(score::Args),
    /// Knockoff competition with fixed (c, lambda).
    Select(select::Args),
    /// Tune (c, lambda), and d when several are given, by model-aware bootstrap.
    Tune(tune::Args),
    /// Run a simulation study from a config file.
    Simulate(simulate::Args),
    /// Long-format curves (and an optional SVG) from simulation records.
    Report(report::Args),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Construct(_) => "construct",
            Command::Score(_) => "score",
            Command::Select(_) => "select",
            Command::Tune(_) => "tune",
            Command::Simulate(_) => "simulate",
            Command::Report(_) => "report",
        }
    }
}
