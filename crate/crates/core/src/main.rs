use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subnewton::experiment::{self, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "subnewton", version, about = "Subsampled Newton experiment runner")]
#[command(after_help = "Set SUBNEWTON_WORKERS to limit the number of concurrent runs.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) pair and write traces, summary and manifest.
    Run { config: PathBuf },
    /// Check a config and print the parsed structure with defaults filled in.
    Validate { config: PathBuf },
    /// Estimate the problem constants and print the report.
    Constants { config: PathBuf },
    /// Re-run a manifest and compare traces with the originals.
    Replay {
        manifest: PathBuf,
        /// Output directory (defaults to `replay/` next to the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const CONFIG_ERROR: u8 = 1;
const ALL_FAILED: u8 = 2;
const REPLAY_MISMATCH: u8 = 3;

fn load(path: &Path) -> Result<experiment::ExperimentConfig, ExitCode> {
    experiment::load_config(path).map_err(|errors| {
        for e in &errors {
            eprintln!("error: {e}");
        }
        ExitCode::from(CONFIG_ERROR)
    })
}

fn fail(e: subnewton::Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(CONFIG_ERROR)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        if v.parse::<usize>().map_or(true, |n| n == 0) {
            eprintln!("error: {WORKERS_ENV} must be a positive integer, found '{v}'");
            return ExitCode::from(CONFIG_ERROR);
        }
    }
    match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Constants { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let report = experiment::load_problem(&cfg).and_then(|p| {
                let r = subnewton::optimize::reference_minimizer(&p.train, cfg.reference_tol)?;
                experiment::constants_for(&p, &r, &cfg)
            });
            match report {
                Ok(r) => {
                    println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Run { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match experiment::run_experiment(&cfg) {
                Ok(out) => {
                    for r in &out.manifest.runs {
                        println!(
                            "{:<24} seed {:<6} {:>5} iters  train_error {:.3e}  {:?}",
                            r.label, r.seed, r.iterations, r.final_train_error, r.status
                        );
                    }
                    println!("wrote {}", out.dir.display());
                    if out.all_failed() {
                        ExitCode::from(ALL_FAILED)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Replay { manifest, out } => {
            let out = out.unwrap_or_else(|| {
                manifest.parent().map(|p| p.join("replay")).unwrap_or_else(|| PathBuf::from("replay"))
            });
            match experiment::replay(&manifest, &out) {
                Ok(rep) => {
                    for (csv, row) in &rep.mismatches {
                        eprintln!("mismatch: {csv} differs at row {row}");
                    }
                    println!(
                        "replayed {} runs into {}; {} mismatched",
                        rep.compared,
                        rep.dir.display(),
                        rep.mismatches.len()
                    );
                    if !rep.mismatches.is_empty() {
                        ExitCode::from(REPLAY_MISMATCH)
                    } else if rep.all_failed {
                        ExitCode::from(ALL_FAILED)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(e),
            }
        }
    }
}
