use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edgeslice::harness::{
    json_bytes, load_config, load_models, oracle_check, report, save_models, train_models, write_comparison,
    Config, Experiment,
};
use edgeslice::Result;

#[derive(Parser)]
#[command(name = "edgeslice", version, about = "Edge network slicing and task offloading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy on one seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint directory; overrides the config's `checkpoints`.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Train the forecaster and both agents and write checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate several policies over several seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Check heuristics and slice adjustment against exhaustive search on
    /// small instances; prints a JSON summary.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long)]
        models: Option<PathBuf>,
    },
}

fn config_with_models(path: &Path, models: Option<PathBuf>) -> Result<Config> {
    let mut config = load_config(path)?;
    if models.is_some() {
        config.checkpoints = models;
    }
    Ok(config)
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            config,
            policy,
            seed,
            out,
            models,
        } => {
            let mut exp = Experiment::new(config_with_models(&config, models)?);
            let metrics = exp.run(&policy, seed)?;
            report(&metrics, &out)?;
            println!(
                "{policy} seed {seed}: profit {:.2}, revenue {:.2}, cost {:.2}, violations {}",
                metrics.totals.profit, metrics.totals.revenue, metrics.totals.cost, metrics.violations
            );
            Ok(metrics.violations == 0)
        }
        Command::Train { config, out } => {
            let config = load_config(&config)?;
            let models = train_models(&config)?;
            save_models(&out, &models)?;
            println!("checkpoints written to {}", out.display());
            Ok(true)
        }
        Command::Compare {
            config,
            policies,
            seeds,
            out,
            models,
        } => {
            let mut exp = Experiment::new(config_with_models(&config, models)?);
            let comparison = exp.compare(&policies, &seeds)?;
            write_comparison(&comparison, &out)?;
            for s in &comparison.summary {
                println!(
                    "{:<16} profit {:>10.2}  revenue {:>10.2}  cost {:>10.2}  hit rate {:.3}",
                    s.policy, s.profit, s.revenue, s.cost, s.hit_rate
                );
            }
            Ok(comparison.summary.iter().all(|s| s.violations == 0))
        }
        Command::Oracle {
            config,
            instances,
            draws,
            models,
        } => {
            let config = config_with_models(&config, models)?;
            let agents = match &config.checkpoints {
                Some(dir) => Some(load_models(dir, &config)?),
                None => None,
            };
            let summary = oracle_check(&config, agents.as_ref().map(|m| &m.current), instances, draws, config.seed)?;
            let bytes = json_bytes(&summary)?;
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(summary.passed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EDGESLICE_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
