//! `hypersolid` command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or format error,
//! 4 numeric failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypersolid::Error;

#[derive(Parser, Debug)]
#[command(name = "hypersolid", version, about = "Hard-ball repulsion SSL laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for data generation, initialization and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 makes every output byte-identical across runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an encoder and write a checkpoint plus per-epoch logs.
    Train(commands::TrainArgs),
    /// Geometry metrics and similarity histograms of an embedding file.
    Analyze(commands::AnalyzeArgs),
    /// Energy profiles along walks between embeddings.
    Walk(commands::WalkArgs),
    /// k-NN and linear probes on frozen embeddings.
    Probe(commands::ProbeArgs),
    /// Reconstruct inputs from target embeddings.
    Invert(commands::InvertArgs),
    /// Encode a data split with a checkpoint and write an HSEB file.
    ExportEmbeddings(commands::ExportArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) | Error::Degenerate(_) => 4,
        Error::Dimension(_) | Error::Argument(_) | Error::Format(_) | Error::Empty(_) | Error::Io(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
