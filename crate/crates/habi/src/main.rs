//! `habi` command-line entry point: stage-by-stage pipeline driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use habi::config::RunConfig;
use habi::error::Result;
use habi::pipeline;

#[derive(Parser)]
#[command(
    name = "habi",
    about = "Train a diffusion planner on toy control tasks, distill it into a fast habitual policy, and compare the two.",
    version
)]
struct Cli {
    /// Run directory for stage outputs.
    #[arg(long, default_value = "runs/default", global = true)]
    out: PathBuf,

    /// Configuration file (key = value lines); defaults are used if absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Replace the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for data generation and evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Config override, repeatable: --set habi.d_z=8
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the offline behavior dataset.
    GenData,
    /// Train the diffusion planner and value network on the dataset.
    TrainPlanner,
    /// Distill the planner into the habitual policy (per seed).
    Habitize,
    /// Evaluate teacher, habitual policy, and baselines over episodes.
    Eval,
    /// Measure single-stream decisions/sec for every policy.
    Bench,
    /// Assemble report.csv / report.txt from eval and bench outputs.
    Report,
    /// Run the whole pipeline at miniature scale in a few minutes.
    Demo,
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match (&cli.config, matches!(cli.command, Command::Demo)) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, true) => pipeline::demo_config(),
        (None, false) => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(threads) = cli.threads {
        config.threads = threads.max(1);
    }
    config.apply_overrides(&cli.set)?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    let config = build_config(cli)?;
    let out = &cli.out;
    match cli.command {
        Command::GenData => pipeline::stage_gen_data(&config, out).map(|_| ()),
        Command::TrainPlanner => pipeline::stage_train_planner(&config, out).map(|_| ()),
        Command::Habitize => pipeline::stage_habitize(&config, out).map(|_| ()),
        Command::Eval => pipeline::stage_eval(&config, out).map(|_| ()),
        Command::Bench => pipeline::stage_bench(&config, out).map(|_| ()),
        Command::Report => pipeline::stage_report(&config, out).map(|_| ()),
        Command::Demo => pipeline::run_all(&config, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
