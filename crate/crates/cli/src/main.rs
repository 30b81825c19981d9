//! Command-line front end: train kernels, sample chains, benchmark kernels
//! against each other and diagnose existing dumps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O or
//! data-format error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anicemc::Error;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "anicemc",
    about = "Adversarially trained flow MCMC kernels, benchmarked against HMC",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a flow proposal for a target; writes checkpoints and a line-JSON log.
    Train(CommonArgs),
    /// Run chains with a kernel and write CSV samples plus a JSON sidecar.
    Sample(CommonArgs),
    /// Run both kernels under identical budgets and emit a comparison table.
    Benchmark(CommonArgs),
    /// Compute ESS / R-hat / error-curve reports for an existing dump.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Named preset (ring, mog2, mog6, ring5, german, heart, australian).
    #[arg(long)]
    preset: Option<String>,
    /// key = value configuration file applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    /// Sampling kernel: hmc or anicemc.
    #[arg(long)]
    kernel: Option<String>,
    /// Trained model checkpoint (required by the anicemc kernel).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long = "burn-in")]
    burn_in: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Training iterations (train subcommand).
    #[arg(long)]
    iterations: Option<usize>,
    /// Cap on worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Dataset file for the blr target.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Chain dump CSV (the .json sidecar is looked up next to it).
    #[arg(long)]
    dump: PathBuf,
    /// Where to write the density raster (2D targets; default out-dir/density.pgm).
    #[arg(long)]
    raster: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> anicemc::Result<ExperimentConfig> {
        let mut overrides: Vec<(&str, String)> = Vec::new();
        if let Some(v) = &self.target {
            overrides.push(("target", v.clone()));
        }
        if let Some(v) = &self.kernel {
            overrides.push(("kernel", v.clone()));
        }
        if let Some(v) = &self.checkpoint {
            overrides.push(("checkpoint", v.display().to_string()));
        }
        if let Some(v) = self.seed {
            overrides.push(("seed", v.to_string()));
        }
        if let Some(v) = self.chains {
            overrides.push(("chains", v.to_string()));
        }
        if let Some(v) = self.burn_in {
            overrides.push(("burn_in", v.to_string()));
        }
        if let Some(v) = self.steps {
            overrides.push(("steps", v.to_string()));
        }
        if let Some(v) = self.iterations {
            overrides.push(("iterations", v.to_string()));
        }
        if let Some(v) = self.threads {
            overrides.push(("threads", v.to_string()));
        }
        if let Some(v) = &self.out_dir {
            overrides.push(("out_dir", v.display().to_string()));
        }
        if let Some(v) = &self.dataset {
            overrides.push(("dataset", v.display().to_string()));
        }
        let cfg =
            ExperimentConfig::resolve(self.preset.as_deref(), self.config.as_deref(), &overrides)?;
        if cfg.threads > 0 {
            // ignore failure when a pool already exists (tests call this twice)
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => args.resolve().and_then(commands::train),
        Command::Sample(args) => args.resolve().and_then(commands::sample),
        Command::Benchmark(args) => args.resolve().and_then(commands::benchmark),
        Command::Diagnose(args) => args
            .common
            .resolve()
            .and_then(|cfg| commands::diagnose(cfg, &args.dump, args.raster.as_deref())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Usage(_) => 2,
        Error::NonFinite(_) => 3,
        Error::Io(_) | Error::Ingestion { .. } | Error::Format(_) => 4,
    }
}
