use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prefbo_harness::estimators::{extreme_pull, Quantity};
use prefbo_harness::{
    run_estimator_benchmark, run_regret_experiment, EstimatorConfig, ExperimentConfig, FunctionSpec, Result,
};
use prefbo_service::ServiceConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "prefbo", version, about = "Preferential Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Regret experiment from a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimator accuracy against a long-chain ground truth.
    Estimators {
        #[arg(long, default_value = "ackley")]
        function: String,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 50)]
        duels: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Independent estimator chains per sample size.
        #[arg(long, default_value_t = 50)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_modes: bool,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Session HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Bench { config, workers, out } => {
            let mut cfg = ExperimentConfig::from_json(&std::fs::read_to_string(&config)?)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let result = run_regret_experiment(&cfg, workers, Some(&cfg.output_dir))?;
            let finals: Vec<_> = result
                .summary
                .iter()
                .filter(|r| r.iteration == cfg.iterations)
                .map(|r| json!({ "function": r.function, "method": r.method, "mean_regret": r.mean_regret, "std_error": r.std_error }))
                .collect();
            Ok(json!({
                "output_dir": cfg.output_dir,
                "trials": result.trials.len(),
                "errors": result.errors().count(),
                "final": finals,
            }))
        }
        Command::Estimators {
            function,
            dim,
            duels,
            trials,
            replicates,
            seed,
            no_modes,
            out,
        } => {
            let cfg = EstimatorConfig {
                function: FunctionSpec::Sized {
                    name: function,
                    dimension: dim,
                },
                n_duels: duels,
                trials,
                replicates,
                seed,
                modes: !no_modes,
                ..EstimatorConfig::default()
            };
            let report = run_estimator_benchmark(&cfg)?;
            report.write_csv(&out)?;
            let (la_mean, ep_mean) = report.approximation_rmse(Quantity::Mean);
            Ok(json!({
                "output_dir": out,
                "la_mean_rmse": la_mean,
                "ep_mean_rmse": ep_mean,
                "ep_extreme_pull": extreme_pull(&report.predictions, 0.05, |r| r.ep),
            }))
        }
        Command::Serve {
            port,
            host,
            seed,
            log_dir,
        } => {
            let cfg = ServiceConfig {
                server_seed: seed,
                log_dir,
                ..ServiceConfig::default()
            };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(prefbo_service::serve(SocketAddr::new(host, port), cfg))?;
            Ok(json!({ "stopped": true }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
