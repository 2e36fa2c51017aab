//! `sdbm`: construct, analyze, train and evaluate layered Boltzmann machines.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdbm_core::{Error, ErrorKind};

use commands::*;

#[derive(Parser, Debug)]
#[command(name = "sdbm", version, about = "Layered Boltzmann machine toolkit")]
struct Cli {
    /// Seed for every stochastic step (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory that receives all outputs (default: current directory).
    #[arg(long = "output-dir", alias = "output_dir", global = true)]
    output_dir: Option<PathBuf>,
    /// TOML file with global keys and one table per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a model file from a constructive family or a layer layout.
    Construct(ConstructArgs),
    /// Summarize a model file.
    Inspect(InspectArgs),
    /// Count the linear regions of the hard-min free energy.
    Regions(RegionsArgs),
    /// Check the free-energy sandwich along a visible line and export it.
    Bounds(BoundsArgs),
    /// Train by stochastic maximum likelihood.
    Train(TrainArgs),
    /// Random hyperparameter search.
    Sweep(SweepArgs),
    /// Estimate log Z and test log-likelihoods.
    Eval(EvalArgs),
    /// Draw visible samples and their nearest dataset neighbors.
    Sample(SampleArgs),
    /// Export free-energy envelopes over a 1-D or 2-D slice.
    ExportEnvelope(EnvelopeArgs),
    /// Convert raw image files or toy generators into a dataset file.
    ConvertData(ConvertArgs),
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 4,
    }
}

fn run(cli: Cli) -> sdbm_core::Result<()> {
    let file = config::ConfigFile::load(cli.config.as_deref())?;
    let global = file.global(cli.seed, cli.threads, cli.output_dir)?;
    if let Some(n) = global.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Construct(a) => construct(&global, file.section("construct", &a)?),
        Command::Inspect(a) => inspect(&global, file.section("inspect", &a)?),
        Command::Regions(a) => regions(&global, file.section("regions", &a)?),
        Command::Bounds(a) => bounds(&global, file.section("bounds", &a)?),
        Command::Train(a) => train(&global, file.section("train", &a)?),
        Command::Sweep(a) => sweep(&global, file.section("sweep", &a)?),
        Command::Eval(a) => eval(&global, file.section("eval", &a)?),
        Command::Sample(a) => sample(&global, file.section("sample", &a)?),
        Command::ExportEnvelope(a) => export_envelope(&global, file.section("export-envelope", &a)?),
        Command::ConvertData(a) => convert_data(&global, file.section("convert-data", &a)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
