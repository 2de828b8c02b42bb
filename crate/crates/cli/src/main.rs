//! Command-line driver: generate data, mount attacks, detect trojans,
//! and run the benchmark matrix. Exit status: 0 success, 1 validation
//! error, 2 attack/detection gate failure.

mod artifacts;
mod commands;
mod config;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use triggerforge::detect::DetectMethod;

#[derive(Parser)]
#[command(name = "triggerforge", version, about = "Backdoor attacks on small image classifiers and recovery of the planted triggers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    DtdTv,
    DtdL1,
    Bf,
}

impl From<ModeArg> for DetectMethod {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DtdTv => DetectMethod::DtdTv,
            ModeArg::DtdL1 => DetectMethod::DtdL1,
            ModeArg::Bf => DetectMethod::Bf,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the face dataset and trigger repositories.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the clean baseline and all configured attacks.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run trojan detection on a checkpoint.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        /// Model checkpoint to examine.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reconstruction mode or brute-force baseline.
        #[arg(long, value_enum, default_value = "dtd-tv")]
        mode: ModeArg,
        /// Fooling-rate threshold (defaults to the config value).
        #[arg(long)]
        delta: Option<f64>,
        /// Also run multi-trigger retrieval on flagged classes.
        #[arg(long)]
        multi: bool,
        /// Region count for --multi.
        #[arg(long)]
        k: Option<usize>,
        /// Path stem of an externally reconstructed perturbation
        /// (expects STEM.pam and STEM.json).
        #[arg(long)]
        bhat: Option<PathBuf>,
    },
    /// Run the full attack x method benchmark and the ROC experiment.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load(common: &CommonArgs) -> Result<config::ExperimentConfig, String> {
    let mut cfg = config::load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.display().to_string();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<ExitCode, String> = match &cli.command {
        Command::Gen { common } => load(common).and_then(|cfg| {
            commands::cmd_gen(&cfg).map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }),
        Command::Attack { common } => load(common).and_then(|cfg| {
            let failures = commands::cmd_attack(&cfg).map_err(|e| e.to_string())?;
            Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }),
        Command::Detect { common, checkpoint, mode, delta, multi, k, bhat } => {
            load(common).and_then(|cfg| {
                let args = commands::DetectArgs {
                    checkpoint: checkpoint.clone(),
                    method: (*mode).into(),
                    delta: *delta,
                    multi: *multi,
                    k: *k,
                    bhat: bhat.clone(),
                };
                commands::cmd_detect(&cfg, &args).map_err(|e| e.to_string())?;
                Ok(ExitCode::SUCCESS)
            })
        }
        Command::Bench { common } => load(common).and_then(|cfg| {
            let failures = commands::cmd_bench(&cfg).map_err(|e| e.to_string())?;
            Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
