use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sace_cli::commands::{self, FitArgs, SimulateArgs, StudyArgs, SummarizeArgs};
use sace_cli::error::{CliError, EXIT_VALIDATION};
use sace_core::model::ModelVariant;

#[derive(Debug, Parser)]
#[command(
    name = "sace",
    version,
    about = "SACE estimation in two-period cluster-randomized crossover trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a trial CSV.
    Fit {
        /// Trial CSV: cluster_id, period, treatment, survived, outcome, covariates...
        data: PathBuf,
        /// Model configuration file (key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model variant; overrides the random-effect switches of the config.
        #[arg(long)]
        model: Option<ModelVariant>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        /// HPD interval mass.
        #[arg(long, default_value_t = 0.95)]
        mass: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Generate one trial from a scenario file or preset, plus its true SACE.
    Simulate {
        /// Scenario file, or one of scenario1, scenario2, scenario3, scenario2-strata-cp, peptic-like.
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory of cached truth files.
        #[arg(long)]
        truth_cache: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Replicated simulation study.
    Study {
        scenario: String,
        /// Sampler settings and priors (key = value); model switches come from --model.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated model variants.
        #[arg(long = "model", alias = "models", value_delimiter = ',')]
        models: Vec<ModelVariant>,
        #[arg(long, default_value_t = 200)]
        replicates: usize,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        /// Upper bound on concurrently running replicates.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 0.95)]
        mass: f64,
        #[arg(long)]
        truth_cache: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Summarize a saved draws CSV.
    Summarize {
        draws: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        mass: f64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            data,
            config,
            model,
            seed,
            chains,
            threads,
            mass,
            out_dir,
        } => {
            let out = commands::fit(&FitArgs {
                data,
                config,
                model,
                seed,
                chains,
                threads,
                mass,
                out_dir: out_dir.clone(),
            })?;
            for f in &out.failures {
                eprintln!("warning: {f}");
            }
            println!(
                "{} draws from {} chains written to {}",
                out.draws.len(),
                out.summary.n_chains,
                out_dir.display()
            );
        }
        Command::Simulate {
            scenario,
            seed,
            truth_cache,
            out_dir,
        } => {
            let (sc, truth) = commands::simulate(&SimulateArgs {
                scenario,
                seed,
                truth_cache,
                out_dir,
            })?;
            println!(
                "{}: mu_ldiff = {:.4}, mu_rom = {:.4}",
                sc.name, truth.mu_ldiff, truth.mu_rom
            );
        }
        Command::Study {
            scenario,
            config,
            models,
            replicates,
            iterations,
            burn_in,
            seed,
            chains,
            threads,
            mass,
            truth_cache,
            out_dir,
        } => {
            let report = commands::study(&StudyArgs {
                scenario,
                config,
                models,
                replicates,
                iterations,
                burn_in,
                seed,
                chains,
                threads,
                mass,
                truth_cache,
                out_dir,
            })?;
            for m in &report.metrics {
                println!(
                    "Model {}: LDiff bias {:.4} coverage {:.3}; ROM bias {:.4} coverage {:.3}; failed {}/{}",
                    m.model.label(),
                    m.ldiff.bias,
                    m.ldiff.coverage,
                    m.rom.bias,
                    m.rom.coverage,
                    m.n_failed,
                    m.n_replicates
                );
            }
        }
        Command::Summarize {
            draws,
            mass,
            out_dir,
        } => {
            print!(
                "{}",
                commands::summarize_draws(&SummarizeArgs {
                    draws,
                    mass,
                    out_dir
                })?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_VALIDATION as u8
            } else {
                0
            });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
