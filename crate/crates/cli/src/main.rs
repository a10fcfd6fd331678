//! `ensei`: parameter inspection, two-party demo, benchmarks and the
//! plaintext oracle.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ensei_core::Error;

use crate::config::{ActivationKind, ConvKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("parameter error: {0}")]
    Params(Error),
    #[error("protocol error: {0}")]
    Protocol(Error),
    #[error("{0}")]
    Unequal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Protocol(_) | CliError::Unequal(_) => 3,
            CliError::Params(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidModulus(_)
            | Error::OrderNotDividing { .. }
            | Error::SearchExhausted
            | Error::BadRoot { .. }
            | Error::BadGeometry(_)
            | Error::GeometryMismatch(_)
            | Error::ChainViolation(_)
            | Error::RangeViolation(_)
            | Error::InvalidParams(_)
            | Error::InvalidSchedule(_) => CliError::Params(e),
            other => CliError::Protocol(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ensei", version, about = "Oblivious frequency-domain convolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a parameter set and the published preset validation report.
    Params(ParamsArgs),
    /// Run the two-party protocol and cross-check against the oracle.
    Demo(DemoArgs),
    /// Time each protocol phase over repeated runs.
    Bench(BenchArgs),
    /// Evaluate the schedule in the clear.
    Oracle(OracleArgs),
    /// Write seeded random weights in the matrix-file format.
    Weights(WeightsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ChainArg {
    Unified,
    Split,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// binary | medium | high | toy
    #[arg(long, conflicts_with_all = ["input_bits", "filter_bits", "fh", "fw"])]
    pub preset: Option<String>,
    #[arg(long, requires_all = ["filter_bits", "fh", "fw"])]
    pub input_bits: Option<u32>,
    /// 0 selects binary weights.
    #[arg(long)]
    pub filter_bits: Option<u32>,
    #[arg(long)]
    pub fh: Option<usize>,
    #[arg(long)]
    pub fw: Option<usize>,
    /// Ring degree for explicit profiles.
    #[arg(long, default_value_t = ensei_core::params::REFERENCE_N)]
    pub n: usize,
    /// Moduli chain for explicit profiles.
    #[arg(long, value_enum, default_value_t = ChainArg::Unified)]
    pub chain: ChainArg,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Baseline,
    FreqDirect,
}

impl From<ModeArg> for ensei_core::protocol::Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Self::Baseline,
            ModeArg::FreqDirect => Self::FreqDirect,
        }
    }
}

/// Network shape and parameters shared by demo, bench and oracle.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Defaults to the schedule's preset, then medium.
    #[arg(long)]
    pub preset: Option<String>,
    /// Seeds keys, shares and any random inputs.
    #[arg(long)]
    pub seed: u64,
    /// TOML schedule; overrides the shape flags below.
    #[arg(long, conflicts_with_all = ["image", "filter", "channels_in", "channels_out", "conv_type", "activation"])]
    pub schedule: Option<PathBuf>,
    /// Image size HxW for a single-convolution schedule.
    #[arg(long, default_value = "8x8", value_parser = parse_dims)]
    pub image: (usize, usize),
    #[arg(long, default_value = "3x3", value_parser = parse_dims)]
    pub filter: (usize, usize),
    #[arg(long, default_value_t = 1)]
    pub channels_in: usize,
    #[arg(long, default_value_t = 1)]
    pub channels_out: usize,
    #[arg(long, value_enum, default_value_t = ConvKindArg::Same)]
    pub conv_type: ConvKindArg,
    /// Activation after the convolution.
    #[arg(long, value_enum)]
    pub activation: Option<ActivationKind>,
    /// Input image, one matrix per channel; seeded random otherwise.
    #[arg(long)]
    pub input_file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConvKindArg {
    Same,
    Valid,
}

impl From<ConvKindArg> for ConvKind {
    fn from(k: ConvKindArg) -> Self {
        match k {
            ConvKindArg::Same => ConvKind::Same,
            ConvKindArg::Valid => ConvKind::Valid,
        }
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let h = h.trim().parse().map_err(|_| "bad height")?;
    let w = w.trim().parse().map_err(|_| "bad width")?;
    Ok((h, w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    /// Both parties in one process over an in-process transport.
    Both,
    Alice,
    Bob,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::FreqDirect)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = RoleArg::Both)]
    pub role: RoleArg,
    /// Bob: address to accept Alice on.
    #[arg(long, conflicts_with = "connect")]
    pub listen: Option<String>,
    /// Alice: Bob's address.
    #[arg(long)]
    pub connect: Option<String>,
    /// Bob's filters. TEST ONLY when passed to Alice: it grants her the
    /// weights so she can run the oracle check.
    #[arg(long)]
    pub weights_file: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::FreqDirect)]
    pub mode: ModeArg,
    /// Run both modes, one row each.
    #[arg(long, conflicts_with = "mode")]
    pub compare: bool,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long)]
    pub weights_file: Option<PathBuf>,
    #[arg(long, conflicts_with = "csv")]
    pub json: bool,
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub weights_file: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Params(a) => commands::params(a),
        Command::Demo(a) => commands::demo(a),
        Command::Bench(a) => commands::bench(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Weights(a) => commands::weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
