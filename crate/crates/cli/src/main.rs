//! `sfpc`: compress tensors, train toy models with learned mantissa widths
//! and cost the results.
//!
//! Exit codes: 0 success, 1 usage, configuration or I/O error (or a failed
//! self-test), 2 corrupt input, 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfp_core::{Error, FloatFormat, Variant};

#[derive(Debug, Parser)]
#[command(name = "sfpc", version, about = "Floating-point tensor compression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pack a raw tensor file into a container.
    Compress(CompressArgs),
    /// Unpack a container into a raw tensor file.
    Decompress(DecompressArgs),
    /// Report compression statistics for a tensor, or run a ratio sweep.
    Stats(StatsArgs),
    /// Train a small MLP and write metrics.
    Train(TrainArgs),
    /// Roofline time and energy report.
    Perf(PerfArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

/// Where the input tensor comes from.
#[derive(Debug, Args)]
struct TensorInput {
    /// Raw tensor file (little-endian, optionally with an SFPR header).
    #[arg(long)]
    input: PathBuf,
    /// fp32 or bf16. Required for headerless files.
    #[arg(long)]
    format: Option<FloatFormat>,
    /// Comma-separated dimensions, e.g. `2,64`.
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
struct CompressArgs {
    #[command(flatten)]
    source: TensorInput,
    /// Mantissa bits to keep. Defaults to the full mantissa.
    #[arg(long, conflicts_with = "width_log")]
    man_width: Option<u32>,
    /// Controller log to take the width from: a trainer `bitlengths.csv`
    /// (last `n` of `--tensor`, rounded up) or `widths.csv` (last width).
    #[arg(long)]
    width_log: Option<PathBuf>,
    /// Tensor id to select from a bitlength log.
    #[arg(long, requires = "width_log")]
    tensor: Option<usize>,
    /// delta-base or fixed-bias.
    #[arg(long, default_value = "delta-base")]
    variant: Variant,
    /// Drop sign bits; every value must be non-negative.
    #[arg(long)]
    signless: bool,
    /// Store NaN and infinity at full width instead of failing.
    #[arg(long)]
    bypass_non_finite: bool,
    /// Lane drain word in bits. Defaults to the value width.
    #[arg(long)]
    lane_word: Option<u32>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct DecompressArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Prefix the output with an SFPR header carrying format and shape.
    #[arg(long)]
    raw_header: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Raw tensor to analyse.
    #[arg(long, required_unless_present = "sweep")]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<FloatFormat>,
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<u64>>,
    /// Write `sweep.csv` and `cdf.csv` for synthetic exponent
    /// distributions into this directory.
    #[arg(long, conflicts_with = "input")]
    sweep: Option<PathBuf>,
    /// Exponents per synthetic distribution.
    #[arg(long, default_value_t = 640_000)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trainer trace to add to the sweep.
    #[arg(long, requires = "sweep")]
    trace: Option<PathBuf>,
    /// First trace epoch included in the sweep.
    #[arg(long, default_value_t = 1)]
    min_epoch: u32,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `key = value` config file. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write every stored tensor to `trace.sfpt`.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct PerfArgs {
    /// Traffic CSV with header `layer,macs,raw_bits,compressed_bits`.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    traffic: Option<PathBuf>,
    /// memory-bound, compute-bound or mixed.
    #[arg(long, value_parser = parse_suite)]
    synthetic: Option<sfp_core::perfmodel::SyntheticSuite>,
    /// Compressed over raw traffic for synthetic suites.
    #[arg(long, default_value_t = 0.5, requires = "synthetic")]
    ratio: f64,
    /// Hardware parameters as JSON.
    #[arg(long)]
    hw: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the per-layer table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// Smaller sample counts.
    #[arg(long)]
    quick: bool,
}

fn parse_suite(s: &str) -> Result<sfp_core::perfmodel::SyntheticSuite, String> {
    use sfp_core::perfmodel::SyntheticSuite;
    match s {
        "memory-bound" => Ok(SyntheticSuite::MemoryBound),
        "compute-bound" => Ok(SyntheticSuite::ComputeBound),
        "mixed" => Ok(SyntheticSuite::Mixed),
        other => Err(format!("unknown suite `{other}`")),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Corrupt { .. }) => 2,
        Some(Error::Numeric(_) | Error::NonFinite { .. }) => 3,
        _ => 1,
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
    let result = match cli.command {
        Command::Compress(a) => commands::compress(a),
        Command::Decompress(a) => commands::decompress(a),
        Command::Stats(a) => commands::stats(a),
        Command::Train(a) => commands::train(a),
        Command::Perf(a) => commands::perf(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
