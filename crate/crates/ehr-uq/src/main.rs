//! Batch experiment driver. Every subcommand reads one declarative TOML
//! config; `--seed` and `--out` override the config's run section. API
//! keys come only from environment variables named in the config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime degradation
//! (unreachable client, missing artifact, unsatisfiable sampling), 1
//! anything else.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use ehr_uq::experiment::{
    cmd_eval_blackbox, cmd_eval_whitebox, cmd_report, cmd_synth, cmd_train, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "ehr-uq",
    about = "Uncertainty quantification experiments for clinical-outcome classifiers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> ehr_uq::Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        if let Some(out) = &self.out {
            config.run.out_dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort, embeddings, dictionary, and prompt
    /// oracle.
    Synth(ConfigArgs),
    /// Train decoder checkpoints for every grid cell.
    Train(ConfigArgs),
    /// Score decoder checkpoints on the held-out slice (white-box table).
    EvalWhitebox(ConfigArgs),
    /// Sample clients over prompts and score uncertainty (black-box table).
    EvalBlackbox {
        #[command(flatten)]
        config: ConfigArgs,
        /// Re-score archived responses from this directory instead of
        /// sampling any client.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Merge evaluation outputs into summaries and plot exports.
    Report {
        /// Output directory for the summary files.
        #[arg(long)]
        out: PathBuf,
        /// One or two run directories to summarize.
        inputs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> ehr_uq::Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let manifest = cmd_synth(&args.load()?)?;
            println!(
                "synth: wrote {} files under {}",
                manifest.files.len(),
                args.out
                    .as_deref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "the run directory".to_string())
            );
        }
        Command::Train(args) => {
            let summary = cmd_train(&args.load()?)?;
            println!("train: saved {} checkpoints", summary.checkpoints.len());
        }
        Command::EvalWhitebox(args) => {
            let report = cmd_eval_whitebox(&args.load()?)?;
            let missing: usize = report.rows.iter().map(|r| r.missing.len()).sum();
            println!(
                "eval-whitebox: {} tasks x {} cells ({} missing)",
                report.rows.len(),
                report.cells.len(),
                missing
            );
        }
        Command::EvalBlackbox { config, replay } => {
            let report = cmd_eval_blackbox(&config.load()?, replay.as_deref())?;
            let missing: usize = report.rows.iter().map(|r| r.missing.len()).sum();
            println!(
                "eval-blackbox{}: {} tasks x {} cells ({} degraded)",
                if replay.is_some() { " (replay)" } else { "" },
                report.rows.len(),
                report.cells.len(),
                missing
            );
        }
        Command::Report { out, inputs } => {
            cmd_report(&inputs, &out)?;
            println!("report: summaries written to {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
