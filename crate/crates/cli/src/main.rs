use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dgdlocal::geometry::{classify_critical, ClassifyOptions};
use dgdlocal::harness::{
    bounds_report, equivalence_for, monte_carlo, run_experiment_config, write_instance, ExperimentConfig,
};
use dgdlocal::{DenseMatrix, FactorPair};

#[derive(Parser)]
#[command(name = "dgdlocal", version, about = "DGD+LOCAL for distributed low-rank matrix factorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write Y, its column blocks, the graph and the mixing matrix.
    Gen {
        config: PathBuf,
        /// Defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment; exits 0 iff the gradient tolerance is met.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Max relative deviation between DGD+LOCAL and gradient descent on g.
    Equiv {
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        iters: usize,
    },
    /// Classify a factor pair as global minimum, strict saddle or not critical.
    Classify {
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        v: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        tol_grad: Option<f64>,
        #[arg(long)]
        tol_saddle: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print every bound value as JSON.
    Bounds { config: PathBuf },
    /// Monte-Carlo over random initializations.
    Mc {
        config: PathBuf,
        /// Defaults to the config's trials.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> dgdlocal::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> dgdlocal::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> dgdlocal::Result<u8> {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = load(&config, out)?;
            for path in write_instance(&cfg, &cfg.output_dir)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::Run { config, out } => {
            let outcome = run_experiment_config(&load(&config, out)?)?;
            print_json(&outcome.summary)?;
            Ok(outcome.exit_code() as u8)
        }
        Command::Equiv { config, iters } => {
            let dev = equivalence_for(&load(&config, None)?, iters)?;
            print_json(&serde_json::json!({ "iters": iters, "max_rel_deviation": dev }))?;
            Ok(0)
        }
        Command::Classify {
            u,
            v,
            y,
            tol_grad,
            tol_saddle,
            seed,
        } => {
            let y = DenseMatrix::load(y)?;
            let p = FactorPair::new(DenseMatrix::load(u)?, DenseMatrix::load(v)?)?;
            let mut opts = ClassifyOptions::defaults_for(&y);
            opts.seed = seed;
            if let Some(t) = tol_grad {
                opts.tol_grad = t;
            }
            if let Some(t) = tol_saddle {
                opts.tol_saddle = t;
            }
            print_json(&classify_critical(&p, &y, &opts)?)?;
            Ok(0)
        }
        Command::Bounds { config } => {
            print_json(&bounds_report(&load(&config, None)?)?)?;
            Ok(0)
        }
        Command::Mc { config, trials, out } => {
            let cfg = load(&config, out)?;
            let summary = monte_carlo(&cfg, trials.unwrap_or(cfg.trials))?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            std::fs::write(cfg.output_dir.join("mc.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            print_json(&summary)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
