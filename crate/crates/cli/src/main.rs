//! `anchorloc` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anchorloc::commands::{cmd_evaluate, cmd_localize, cmd_perturb, cmd_simulate, cmd_sweep, SweepOutcome};
use anchorloc::Error;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "anchorloc", version, about = "Anchor-adjusted multi-camera localization")]
struct Cli {
    /// On failure, print `{"error": {"kind", "message"}}` to stderr instead of text.
    #[arg(long, global = true)]
    error_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expand a scenario JSON into cameras, anchors, trajectories and observations.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a perturbed copy of a camera file.
    Perturb {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Localize observations with a run config.
    Localize {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score estimates against ground truth.
    Evaluate {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        initials: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run (or resume) a parameter sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cells solved in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// List the cells without running them.
        #[arg(long)]
        dry_run: bool,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Simulate { config, out, seed } => {
            for p in cmd_simulate(&config, &out, seed)? {
                println!("{}", p.display());
            }
        }
        Command::Perturb { config, out, seed } => {
            println!("{}", cmd_perturb(&config, &out, seed)?.display());
        }
        Command::Localize { config, out } => {
            let d = cmd_localize(&config, out.as_deref())?;
            println!(
                "{} estimates, {} converged, {} failed, {} skipped",
                d.n_estimates,
                d.n_converged,
                d.failures.len(),
                d.skipped.len()
            );
        }
        Command::Evaluate {
            estimates,
            truth,
            initials,
            out,
        } => {
            let r = cmd_evaluate(&estimates, &truth, &initials, &out)?;
            println!(
                "{} frames, average distance {:.4} m, std {:.4} m, improvement ratio {:.3}",
                r.overall.n_frames, r.overall.average_distance, r.overall.distance_std, r.overall.improvement_ratio
            );
        }
        Command::Sweep {
            config,
            out,
            jobs,
            dry_run,
            seed,
        } => match cmd_sweep(&config, &out, jobs, dry_run, seed)? {
            SweepOutcome::DryRun(cells) => {
                for c in &cells {
                    println!("{}", c.file_name());
                }
                println!("{} cells", cells.len());
            }
            SweepOutcome::Written { csv, rows, failures } => {
                println!("{} ({rows} rows, {failures} failed frames)", csv.display());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ANCHORLOC_LOG", "warn")).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.error_json {
                let doc = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
                eprintln!("{doc}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::FAILURE
        }
    }
}
