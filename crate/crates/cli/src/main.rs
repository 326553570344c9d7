//! `flowcast`: train conditional normalizing flows on hourly load data,
//! sample scenario forecasts, and evaluate reliability and sharpness
//! against an autoregressive baseline.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numerical
//! failure (training divergence or non-finite values).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowcast_core::Error;

use flowcast_cli::commands;
use flowcast_cli::config::{ForecastMethod, RunConfig};

#[derive(Parser)]
#[command(
    name = "flowcast",
    version,
    about = "Flow-based conditional scenario forecasting for residential load",
    after_help = "Artifact paths in the configuration resolve relative to --out. \
                  The environment variable FLOWCAST_THREADS caps parallelism."
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for all artifacts (default "out").
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,

    /// Override the active command's random seed.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic residential-load dataset CSV.
    Synth {
        /// Number of synthetic households.
        #[arg(long, value_name = "N")]
        households: Option<usize>,
    },
    /// Train a flow by conditional maximum likelihood (optionally
    /// Wasserstein-regularized) and write a checkpoint.
    Train {
        /// Coupling variant: vanilla or reinforced.
        #[arg(long, value_name = "V")]
        variant: Option<flowcast_core::flow::CouplingVariant>,
        /// Number of coupling blocks.
        #[arg(long, value_name = "K")]
        blocks: Option<usize>,
        /// Wasserstein regularization weight.
        #[arg(long, value_name = "B")]
        beta: Option<f64>,
        /// Households to aggregate from the dataset.
        #[arg(long, value_name = "N")]
        households: Option<usize>,
    },
    /// Sample scenario forecasts for every test window.
    Forecast {
        /// flow (checkpoint) or ar-noise (AR(24) baseline).
        #[arg(long, value_name = "M")]
        method: Option<String>,
        /// Checkpoint path for the flow method.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<String>,
        /// Scenarios per test window.
        #[arg(long, value_name = "M")]
        scenarios: Option<usize>,
        /// Households to aggregate from the dataset.
        #[arg(long, value_name = "N")]
        households: Option<usize>,
        /// Scenario CSV to write.
        #[arg(long, value_name = "PATH")]
        out_csv: Option<String>,
    },
    /// Compute reliability and sharpness metrics plus SVG plots.
    Eval {
        /// Households to aggregate from the dataset.
        #[arg(long, value_name = "N")]
        households: Option<usize>,
    },
    /// Run the mixture-fitting divergence study.
    Toy {},
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.out = Some(out);
    }

    match &cli.command {
        Command::Synth { households } => {
            if let Some(n) = households {
                cfg.synth.households = *n;
            }
            if let Some(s) = cli.seed {
                cfg.synth.seed = s;
            }
            commands::cmd_synth(&cfg)
        }
        Command::Train { variant, blocks, beta, households } => {
            if let Some(v) = variant {
                cfg.flow.variant = *v;
            }
            if let Some(k) = blocks {
                cfg.flow.blocks = *k;
            }
            if let Some(b) = beta {
                cfg.train.beta = *b;
            }
            if let Some(n) = households {
                cfg.data.households = *n;
            }
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            commands::cmd_train(&cfg)
        }
        Command::Forecast { method, checkpoint, scenarios, households, out_csv } => {
            if let Some(m) = method {
                cfg.forecast.method = match m.as_str() {
                    "flow" => ForecastMethod::Flow,
                    "ar" | "ar-noise" => ForecastMethod::ArNoise,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown forecast method '{other}' (expected 'flow' or 'ar-noise')"
                        )))
                    }
                };
            }
            if let Some(c) = checkpoint {
                cfg.forecast.checkpoint = c.clone();
            }
            if let Some(m) = scenarios {
                cfg.forecast.scenarios = *m;
            }
            if let Some(n) = households {
                cfg.data.households = *n;
            }
            if let Some(p) = out_csv {
                cfg.forecast.out_csv = p.clone();
            }
            if let Some(s) = cli.seed {
                cfg.forecast.seed = s;
            }
            commands::cmd_forecast(&cfg)
        }
        Command::Eval { households } => {
            if let Some(n) = households {
                cfg.data.households = *n;
            }
            commands::cmd_eval(&cfg)
        }
        Command::Toy {} => commands::cmd_toy(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence(_) | Error::NonFinite(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
