use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hac_cli::commands;
use hac_cli::config::{EnvConfig, ExperimentConfig};
use hac_cli::error::{CliError, CliResult};
use hac_core::dynamics::DynamicsModel;
use hac_core::env::EnvKind;
use hac_core::policy::Policy;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hac", version, about = "Hamiltonian actor-critic experiments")]
struct Cli {
    /// Overrides the seed list (train, critic-error, robustness) or the single seed of other commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a random-action PMDS dataset.
    GenDataset {
        /// lqr, pendulum or mountain_car; taken from the config when absent.
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Trains every seed of a config.
    Train,
    /// Evaluates a saved policy.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Writes an annotated imagined rollout (t, s, a, lambda, H) to this CSV.
        #[arg(long)]
        dump_rollout: Option<PathBuf>,
        /// Dynamics model for the dump; the exact dynamics when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Critic error against the Riccati ground truth on LQR.
    CriticError {
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Trains both methods and tests them from a shifted initial state.
    Robustness {
        /// Comma-separated test initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,0,1,1,0")]
        test_init: Vec<f64>,
    },
    /// Times closed-form against finite-difference state Jacobians.
    JacobianBench {
        #[arg(long, default_value_t = 5)]
        state_dim: usize,
        #[arg(long, default_value_t = 3)]
        action_dim: usize,
        #[arg(long, default_value_t = commands::BENCH_HIDDEN)]
        hidden: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let path = path.ok_or_else(|| CliError::input("--config is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn output_dir(out: Option<PathBuf>, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    out.or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::input("no output directory: pass --out or set output_dir"))
}

fn print<T: Serialize>(value: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::GenDataset { env, size } => {
            let cfg = config.map(ExperimentConfig::load).transpose()?;
            let kind: EnvKind = match (&env, &cfg) {
                (Some(name), _) => name.parse()?,
                (None, Some(c)) => c.env.name,
                (None, None) => return Err(CliError::input("pass --env or --config")),
            };
            let env_cfg = match &cfg {
                Some(c) if c.env.name == kind => c.env.clone(),
                _ => EnvConfig::new(kind),
            };
            let ds = cfg.as_ref().and_then(|c| c.dataset.clone());
            let size = size
                .or(ds.as_ref().and_then(|d| d.size))
                .unwrap_or(kind.default_dataset_size());
            let seed = cli.seed.or(ds.as_ref().map(|d| d.seed)).unwrap_or(0);
            let range = cfg.as_ref().map_or(1.0, |c| c.train.unbounded_action_range);
            let out = cli.out.ok_or_else(|| CliError::input("--out is required"))?;
            let environment = env_cfg.build()?;
            print(&commands::gen_dataset(environment.as_ref(), kind, size, seed, range, &out)?)
        }
        Command::Train => {
            let cfg = load_config(config, cli.seed)?;
            let out = output_dir(cli.out, &cfg)?;
            print(&commands::train(&cfg, &out)?)
        }
        Command::Eval {
            policy,
            episodes,
            dump_rollout,
            model,
        } => {
            let cfg = load_config(config, None)?;
            let env = cfg.env.build()?;
            let policy = Policy::load(&policy)?;
            let model = model.map(DynamicsModel::load).transpose()?;
            let seed = cli.seed.unwrap_or(cfg.train.eval_seed);
            let gamma = cfg.train.gamma_for(env.as_ref());
            let dump = dump_rollout
                .as_deref()
                .map(|p| (p, model.as_ref(), cfg.hac.k, gamma));
            print(&commands::eval(env.as_ref(), &policy, episodes, seed, dump)?)
        }
        Command::CriticError { episodes } => {
            let cfg = load_config(config, cli.seed)?;
            let out = output_dir(cli.out, &cfg)?;
            print(&commands::critic_error(&cfg, episodes, &out)?)
        }
        Command::Robustness { test_init } => {
            let cfg = load_config(config, cli.seed)?;
            let out = output_dir(cli.out, &cfg)?;
            print(&commands::robustness(&cfg, &test_init, &out)?)
        }
        Command::JacobianBench {
            state_dim,
            action_dim,
            hidden,
            batch,
            repeats,
        } => {
            let report = commands::jacobian_bench(
                state_dim,
                action_dim,
                hidden,
                batch,
                repeats,
                cli.seed.unwrap_or(0),
            )?;
            if let Some(out) = &cli.out {
                std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
            }
            print(&report)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
