//! `rlhf-lab` command line: one config file per run, with `--output` and
//! `--seed` as the only overrides.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rlhf_lab::harness::{self, ExperimentConfig, Outcome};
use rlhf_lab::LabError;

#[derive(Debug, Parser)]
#[command(
    name = "rlhf-lab",
    version,
    about = "Online iterative RLHF on synthetic environments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML config, or JSON when the extension is `.json`.
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `master_seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the environment and reference policy.
    GenEnv(RunArgs),
    /// Fit a Bradley-Terry reward model.
    FitReward(RunArgs),
    /// Fit a pairwise preference model.
    FitPrefModel(RunArgs),
    /// Single-shot DPO on an offline dataset of the same budget as the loop.
    RunOfflineDpo(RunArgs),
    /// Online iterative DPO with best/worst-of-n pair collection.
    RunIterative(RunArgs),
    /// Main agent plus enhancer exploration in a linear environment.
    RunTheoretical(RunArgs),
    /// Correlate scorer rewards with response lengths.
    AnalyzeLengthBias(RunArgs),
    /// Recompute and tabulate metrics of earlier runs.
    Compare(RunArgs),
}

type Experiment = fn(&ExperimentConfig, &Path) -> rlhf_lab::Result<Outcome>;

fn execute(name: &str, args: &RunArgs, experiment: Experiment) -> Result<Outcome, LabError> {
    let mut cfg = harness::parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &args.output {
        cfg.output_dir = Some(out.clone());
    }
    let out = cfg.resolve_output_dir(name);
    experiment(&cfg, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args, experiment): (&str, &RunArgs, Experiment) = match &cli.command {
        Command::GenEnv(a) => ("gen-env", a, harness::gen_env),
        Command::FitReward(a) => ("fit-reward", a, harness::fit_reward),
        Command::FitPrefModel(a) => ("fit-pref-model", a, harness::fit_pref_model),
        Command::RunOfflineDpo(a) => ("run-offline-dpo", a, harness::run_offline),
        Command::RunIterative(a) => ("run-iterative", a, harness::run_iterative),
        Command::RunTheoretical(a) => ("run-theoretical", a, harness::run_theoretical),
        Command::AnalyzeLengthBias(a) => ("analyze-length-bias", a, harness::analyze_length_bias),
        Command::Compare(a) => ("compare", a, harness::compare_runs),
    };
    match execute(name, args, experiment) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rlhf-lab {name}: [{}] {e}", e.category());
            ExitCode::from(1)
        }
    }
}
