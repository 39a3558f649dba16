use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use isectreg_cli::{
    convergence_demo, eval_fidelity, gen_data, reproduce_claim, train, CliError, ExperimentConfig, Mode, TrainOverrides,
};
use isectreg_core::{QuantScope, RefitMode};

#[derive(Parser)]
#[command(name = "isectreg", version, about = "Intersection-regularized attribute recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Refit {
    PerBatch,
    PerEpoch,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Sample,
    Batch,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train F, G and T on a dataset bundle.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long)]
        lambda3: Option<f64>,
        #[arg(long, value_enum)]
        refit: Option<Refit>,
        #[arg(long, value_enum)]
        quant_scope: Option<Scope>,
    },
    /// Score an integer representation against ground-truth attributes.
    EvalFidelity {
        #[arg(long)]
        repr: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        bits: u32,
    },
    /// Run the bi-convex convergence sandbox.
    ConvergenceDemo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        iters: usize,
    },
    /// Compare the full method against the baseline over several seeds.
    ReproduceClaim {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out } => {
            let config = ExperimentConfig::load(config.as_deref(), Mode::GenData)?;
            let out = config.output_dir(out.as_deref())?;
            gen_data(&config, &out)?;
            eprintln!("wrote dataset bundle to {}", out.display());
        }
        Command::Train {
            config,
            data,
            out,
            lambda2,
            lambda3,
            refit,
            quant_scope,
        } => {
            let mut config = ExperimentConfig::load(config.as_deref(), Mode::Train)?;
            TrainOverrides {
                lambda2,
                lambda3,
                refit: refit.map(|r| match r {
                    Refit::PerBatch => RefitMode::PerBatch,
                    Refit::PerEpoch => RefitMode::PerEpoch,
                }),
                quant_scope: quant_scope.map(|s| match s {
                    Scope::Sample => QuantScope::Sample,
                    Scope::Batch => QuantScope::Batch,
                }),
            }
            .apply(&mut config);
            let out = config.output_dir(out.as_deref())?;
            let summary = train(&config, &data, &out)?;
            let last = summary.report_epoch.and_then(|e| summary.reports.get(e - 1));
            if let Some(r) = last {
                eprintln!(
                    "epoch {}: test accuracy {:.4}, tree {:.4}, fidelity {}",
                    r.epoch,
                    r.test_net_accuracy,
                    r.test_tree_accuracy,
                    r.fidelity.map_or("n/a".to_owned(), |f| format!("{f:.4}"))
                );
            }
        }
        Command::EvalFidelity { repr, truth, bits } => {
            print_json(&eval_fidelity(&repr, &truth, bits)?)?;
        }
        Command::ConvergenceDemo { config, out, iters } => {
            let config = ExperimentConfig::load(config.as_deref(), Mode::ConvergenceDemo)?;
            let out = config.output_dir(out.as_deref())?;
            for c in convergence_demo(&config, &out, iters)? {
                eprintln!(
                    "{} {}: Q {:.3e}, monotone {}, descent {}, settled at {:?}",
                    c.instance, c.method, c.final_q, c.monotone, c.descent_inequality, c.settled_at
                );
            }
        }
        Command::ReproduceClaim { config, out, seeds } => {
            let config = ExperimentConfig::load(config.as_deref(), Mode::ReproduceClaim)?;
            let out = config.output_dir(out.as_deref())?;
            let report = reproduce_claim(&config, seeds, &out)?;
            let line = format!(
                "method {:.4}, baseline {:.4}, margin {:+.4} (need {:+.4}); accuracy {:.4} vs {:.4}",
                report.method_fidelity_mean,
                report.baseline_fidelity_mean,
                report.margin,
                report.required_margin,
                report.method_accuracy_mean,
                report.baseline_accuracy_mean
            );
            if let Some(note) = &report.note {
                eprintln!("{note}");
            }
            if !report.pass {
                return Err(CliError::ClaimFailed(format!("claim not met: {line}")));
            }
            eprintln!("claim met: {line}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap's own usage-error code collides with the I/O code
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.use_stderr() {
                true => ExitCode::from(isectreg_cli::EXIT_VALIDATION as u8),
                false => ExitCode::SUCCESS,
            };
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
