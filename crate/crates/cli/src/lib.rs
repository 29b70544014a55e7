//! `xdoge` command-line pipeline: dedup, optimize, average, plan, report.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad arguments, configs,
//! inputs, infeasible caps), 2 on runtime failures (I/O, ingestion, numeric
//! trouble during training).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use xdoge::rescale::PlanCaps;
use xdoge::Result;

pub mod commands;
pub mod config;

pub use commands::{
    cmd_average, cmd_dedup, cmd_optimize, cmd_plan, cmd_report, cmd_sample, cmd_synth, Mode,
    OptimizeOptions, OptimizeOutcome,
};
pub use config::RunConfigFile;

#[derive(Debug, Parser)]
#[command(
    name = "xdoge",
    version,
    about = "Cross-lingual data-mixture reweighting"
)]
pub struct Cli {
    /// Seed for optimize, synth and sample; overrides config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: `out`, or the config's `out_dir`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Floor-projected weights (thresholded) or the plain update.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Remove byte-exact duplicate documents.
    Dedup {
        manifest: PathBuf,
        /// Dedup across the domains of each language instead of per source.
        #[arg(long)]
        cross_source: bool,
    },
    /// Train the proxy and write the weight trajectory and final weights.
    Optimize(OptimizeArgs),
    /// Average language weight files.
    Average {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Output file (default: `<out-dir>/weights_average.tsv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn language weights into a token-budget plan.
    Plan {
        weights: PathBuf,
        inventory: PathBuf,
        #[arg(long)]
        budget: u64,
        #[arg(long)]
        max_repetition: Option<f64>,
        #[arg(long)]
        min_utilization: Option<f64>,
    },
    /// KL table of runs against a reference, plus per-step weight CSVs.
    Report {
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        /// Trajectory or domain weight file to compare against.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        window: usize,
    },
    /// Generate a synthetic corpus with its manifest.
    Synth { config: PathBuf },
    /// Draw documents by language weight.
    Sample {
        weights: PathBuf,
        manifest: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        draws: u64,
    },
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop and checkpoint after this many steps.
    #[arg(long)]
    pub stop_at: Option<u64>,
}

/// Runs one command, printing its summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::Dedup {
            manifest,
            cross_source,
        } => {
            let report = cmd_dedup(&manifest, &out_dir, cross_source)?;
            print!("{report}");
        }
        Command::Optimize(args) => {
            let opts = OptimizeOptions {
                config: args.config,
                seed: cli.seed,
                mode: cli.mode,
                out_dir: cli.out_dir,
                steps: args.steps,
                resume: args.resume,
                stop_at: args.stop_at,
            };
            let outcome = cmd_optimize(&opts)?;
            match outcome.weights {
                Some(w) => print!("{}", w.to_text()),
                None => println!(
                    "stopped at step {}; checkpoint in {}",
                    outcome.steps_done,
                    outcome.out_dir.display()
                ),
            }
        }
        Command::Average { files, out } => {
            let out = out.unwrap_or_else(|| out_dir.join("weights_average.tsv"));
            let avg = cmd_average(&files, &out)?;
            print!("{}", avg.to_text());
        }
        Command::Plan {
            weights,
            inventory,
            budget,
            max_repetition,
            min_utilization,
        } => {
            let caps = PlanCaps {
                max_repetition,
                min_utilization,
            };
            let p = cmd_plan(&weights, &inventory, budget, caps, &out_dir)?;
            print!("{}", xdoge::rescale::plan_report(&p));
        }
        Command::Report {
            trajectories,
            reference,
            window,
        } => {
            let report = cmd_report(&trajectories, &reference, window, &out_dir)?;
            print!("{report}");
        }
        Command::Synth { config } => {
            let manifest = cmd_synth(&config, cli.seed.unwrap_or(0), &out_dir)?;
            println!("{}", manifest.display());
        }
        Command::Sample {
            weights,
            manifest,
            draws,
        } => {
            let out = out_dir.join("draws.tsv");
            std::fs::create_dir_all(&out_dir).map_err(|e| xdoge::Error::io(&out_dir, e))?;
            cmd_sample(&weights, &manifest, draws, cli.seed.unwrap_or(0), &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}
