use std::io::stdout;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lewis_sim::config::ExperimentConfig;
use lewis_sim::experiment::run_batch;
use lewis_sim::report;

#[derive(Parser)]
#[command(name = "lewis-sim", version, about = "Lewis signaling games between agents in separate environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of repetitions and write the CSV bundle.
    Run {
        /// Config file, or the name of a bundled preset.
        config: String,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, env = "LEWIS_SIM_OUT", default_value = "out")]
        out: PathBuf,
        /// Write the full episode trace of this repetition.
        #[arg(long, value_name = "REP_INDEX")]
        trace: Option<usize>,
        /// Override a config field, e.g. `--set phase1.episodes=2000`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Rebuild histograms and the label cross-tab from a runs file.
    Report {
        runs: PathBuf,
        #[arg(long, env = "LEWIS_SIM_OUT")]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate { config: String },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, reps, seed, workers, out, trace, overrides } => {
            let mut cfg = ExperimentConfig::load(&config, &overrides)?;
            if let Some(r) = reps {
                cfg.repetitions = r;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            cfg.validate()?;
            if let Some(t) = trace {
                if t >= cfg.repetitions {
                    bail!("--trace {t} is not a repetition index (batch has {})", cfg.repetitions);
                }
            }
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            if workers == 0 {
                bail!("--workers must be at least 1");
            }
            let started = Instant::now();
            let batch = run_batch::<f64>(&cfg, workers, trace)?;
            let written =
                report::write_bundle(&batch, &out).with_context(|| format!("writing bundle to {}", out.display()))?;
            report::print(&mut stdout(), &report::format_summary(&batch.summary))?;
            eprintln!(
                "{} repetitions in {:.1}s; wrote {}",
                cfg.repetitions,
                started.elapsed().as_secs_f64(),
                written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
            );
        }
        Command::Report { runs, out } => {
            let rows = report::read_runs_file(&runs)?;
            let rep = report::report_from_runs(&rows)?;
            report::print(&mut stdout(), &report::format_runs_report(&rep))?;
            if let Some(dir) = out {
                report::write_runs_report(&rep, &dir)?;
            }
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config, &[])?;
            cfg.validate()?;
            println!("{}: ok", cfg.name);
        }
    }
    Ok(())
}
