//! bmrsw command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use bmrsw::config::LambdaChoice;

mod commands;

const FORMATS: &str = "\
Output files (all numbers are shortest round-trip decimal floats):
  dataset.csv                x0,weight
  dataset_manifest.json      generator settings, seed, creation time
  rsw_eval.json              estimate, potential summary, lowest-weight atoms
  rsw_trace.csv              iteration,h1_value,running_estimate
  lambda_diagnostic.csv      lambda,replicate,value
  lambda_diagnostic.json     per-lambda quartiles and the suggested lambda
  lambda_selection_manifest.json   suggestion read by --lambda auto
  bootstrap.csv              index,theta_0..theta_{d-1},loss
  bootstrap_summary.json     medians, percentile intervals, widths
  bootstrap_replicates.log   one line per replicate
  bootstrap_manifest.json    settings, failures, creation time
  mmd_limit.csv              sigma0,scaled_mmd_sq,target,deviation";

#[derive(Parser)]
#[command(name = "bmrsw", version, about = "Robust simulation-based inference with the bootstrapped minimum RSW estimator")]
#[command(after_help = FORMATS)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true, env = "BMRSW_SEED")]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads (0 = one per logical core).
    #[arg(long, global = true, env = "BMRSW_WORKERS")]
    pub workers: Option<usize>,

    /// Robustness parameter, or `auto` to use the last selection run.
    #[arg(long, global = true)]
    pub lambda: Option<LambdaChoice>,

    /// SGA iterations (also the noise-bank size).
    #[arg(long, global = true)]
    pub iterations: Option<usize>,

    /// Fraction of SGA iterations excluded from the running average.
    #[arg(long, global = true)]
    pub burn_in: Option<f64>,

    /// Minimum normalized chord gap of the elbow rule.
    #[arg(long, global = true)]
    pub elbow_min_gap: Option<f64>,

    /// Minimum relative decrease of the elbow rule.
    #[arg(long, global = true)]
    pub elbow_min_decrease: Option<f64>,

    /// Atoms kept per side of the multivariate diagnostic.
    #[arg(long, global = true)]
    pub subsample_cap: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a (possibly contaminated) dataset.
    Simulate,
    /// Estimate the divergence at one parameter value.
    RswEval {
        /// Parameter vector, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        theta: Vec<f64>,
        /// Number of lowest-weight atoms to report.
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Also write the per-iteration SGA trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run the λ-selection diagnostic over the configured grid.
    LambdaSelect,
    /// Bootstrap fits at a fixed or previously selected λ.
    Bootstrap,
    /// Scaled Gaussian MMD over increasing bandwidths.
    MmdLimit,
    /// Print a text summary of the files in the output directory.
    Report,
    /// Print the effective configuration as JSON.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = commands::load_config(&cli.global)?;
    match cli.command {
        Command::Simulate => commands::simulate(&config),
        Command::RswEval { theta, top, trace } => commands::rsw_eval(&config, &theta, top, trace),
        Command::LambdaSelect => commands::lambda_select(&config),
        Command::Bootstrap => commands::bootstrap(&config),
        Command::MmdLimit => commands::mmd_limit(&config),
        Command::Report => commands::report(&config),
        Command::Config => {
            println!("{}", config.to_json()?);
            Ok(())
        }
    }
}
