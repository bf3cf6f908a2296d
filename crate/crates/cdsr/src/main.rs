use clap::{Parser, Subcommand};
use cdsr::config::{load_config, ExperimentConfig};
use cdsr::pipeline::{run, Command};
use std::path::PathBuf;

/// Debiased cross-domain sequential recommendation laboratory.
#[derive(Parser)]
#[command(name = "cdsr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the run seed (first configured seed otherwise).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a synthetic scenario and dump its ground-truth CSVs.
    Generate,
    /// Train one model and write a checkpoint plus step history.
    Train,
    /// Rank held-out items with a trained checkpoint.
    Evaluate,
    /// Run the estimator verification checks.
    Verify,
    /// Full pipeline over the configured seed list, with a summary.
    Experiment,
    /// Render the summary table from a previous experiment.
    Report,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code for usage errors is 2, which this tool
            // reserves for check failures
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match &cli.config {
        Some(path) => match load_config(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                std::process::exit(e.exit_code());
            }
        },
        None => ExperimentConfig::default(),
    };
    let command = match cli.command {
        Cmd::Generate => Command::Generate,
        Cmd::Train => Command::Train,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Verify => Command::Verify,
        Cmd::Experiment => Command::Experiment,
        Cmd::Report => Command::Report,
    };
    if let Err(e) = run(command, &cfg, &cli.out, cli.seed) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
