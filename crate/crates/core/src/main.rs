use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asymcycle::experiment::{self, ExperimentConfig, Profile, RunStatus};
use asymcycle::Error;

/// Asymmetric vs symmetric cycle-consistency experiments on synthetic thigh phantoms.
#[derive(Parser)]
#[command(name = "asymcycle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment directory; relative paths are placed under $ASYMCYCLE_OUTPUT_ROOT when set.
    dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write experiment.json, the phantom cohort and the fold plan.
    GenData {
        #[command(flatten)]
        exp: ExpArgs,
        /// JSON experiment config; defaults to the selected profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        profile: Profile,
        /// Master seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Train every mode × weight × fold × repeat run (finished runs are skipped).
    RunGrid {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score finished runs on their held-out folds.
    Evaluate {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Write the comparison table and sample grids.
    Report {
        #[command(flatten)]
        exp: ExpArgs,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => 3,
        Error::Incomplete { .. } => 4,
        Error::NotEmpty(_) | Error::StateMismatch(_) | Error::Leakage(_) => 5,
        _ => 1,
    }
}

fn gen_data(
    dir: &Path,
    config: Option<PathBuf>,
    profile: Profile,
    seed: Option<u64>,
    overwrite: bool,
) -> asymcycle::Result<()> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(&path)?,
        None => ExperimentConfig::profile(profile, 0),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
        cfg.resolve();
    }
    let manifest = experiment::gen_data(dir, &cfg, overwrite)?;
    println!(
        "{}: {} slices, {} folds, manifest {}",
        dir.display(),
        manifest.slices.len(),
        manifest.folds.k,
        &manifest.digest()[..16]
    );
    Ok(())
}

fn run(cli: Cli) -> asymcycle::Result<()> {
    match cli.command {
        Command::GenData {
            exp,
            config,
            profile,
            seed,
            overwrite,
        } => gen_data(&experiment::resolve_dir(&exp.dir), config, profile, seed, overwrite),
        Command::RunGrid { exp, jobs } => {
            let dir = experiment::resolve_dir(&exp.dir);
            let done = experiment::run_grid(&dir, jobs, |run, status| {
                let verb = match status {
                    RunStatus::Trained => "trained",
                    RunStatus::Resumed => "resumed",
                    RunStatus::Skipped => "skipped",
                };
                eprintln!("{verb} {}", run.dir.display());
            })?;
            println!("{} runs complete", done.len());
            Ok(())
        }
        Command::Evaluate { exp } => {
            let records = experiment::evaluate(&experiment::resolve_dir(&exp.dir))?;
            println!("{} slice evaluations", records.len());
            Ok(())
        }
        Command::Report { exp } => {
            let out = experiment::report(&experiment::resolve_dir(&exp.dir))?;
            print!("{}", out.text);
            for f in out.figures {
                println!("figure {}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
