use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polgrad::envlink::{reacher_factory, Server, ENDPOINT_ENV};
use polgrad::envs::ReacherOptions;
use polgrad::harness::{
    apply_reference_preset, bench_shared, evaluate_checkpoint, export_curves, resume, train, HarnessError, TrainSummary,
};
use polgrad::rollout::{Algo, TrainConfig};

#[derive(Parser)]
#[command(name = "polgrad", version, about = "Train and evaluate TRPO, PPO and ACKTR on arm reachers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm, or all three with --bench-shared.
    Train {
        #[arg(long)]
        algo: Option<Algo>,
        #[arg(long)]
        env: Option<String>,
        /// Total environment steps.
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// 2048-step episodes and horizon, 1M steps.
        #[arg(long)]
        paper: bool,
        /// Run trpo, ppo and acktr with identical hyperparameters.
        #[arg(long)]
        bench_shared: bool,
        /// Environment server address.
        #[arg(long, env = ENDPOINT_ENV)]
        remote: Option<String>,
        /// `key = value` config file applied over the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single `key=value` override, repeatable; applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory; defaults to runs/<env>-<algo>-s<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue a run from its checkpoint.
    Resume {
        #[arg(long)]
        run: PathBuf,
        /// New total step budget.
        #[arg(long)]
        steps: Option<String>,
        #[arg(long, env = ENDPOINT_ENV)]
        remote: Option<String>,
    },
    /// Evaluate a checkpoint with the mean action.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Sample actions instead of taking the mean.
        #[arg(long)]
        stochastic: bool,
        #[arg(long, env = ENDPOINT_ENV)]
        remote: Option<String>,
    },
    /// Reward curves with a rolling ±std band for each run log.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        window: usize,
    },
    /// Serve environments over the framed TCP protocol.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Environment used when a client's HELLO names none.
        #[arg(long, default_value = "Reach2D-v0")]
        env: String,
        #[arg(long, default_value_t = 512)]
        max_episode_steps: usize,
    },
}

fn config_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn build_config(
    algo: Option<Algo>,
    env: Option<String>,
    steps: Option<String>,
    seed: Option<u64>,
    workers: Option<usize>,
    paper: bool,
    config: Option<PathBuf>,
    overrides: &[String],
) -> Result<TrainConfig, HarnessError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = config {
        let text = std::fs::read_to_string(&path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if paper {
        apply_reference_preset(&mut cfg);
    }
    if let Some(a) = algo {
        cfg.algo = a;
    }
    if let Some(e) = env {
        cfg.env = e;
    }
    if let Some(s) = steps {
        cfg.set("total_steps", &s)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    for kv in overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| config_error(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(label: &str, s: &TrainSummary) {
    match s.rolling {
        Some((m, d)) => println!("{label}: {} updates, {} steps, trailing reward {m:.4} ± {d:.4}", s.updates, s.total_steps),
        None => println!("{label}: {} updates, {} steps, no finished episodes", s.updates, s.total_steps),
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { algo, env, steps, seed, workers, paper, bench_shared: bench, remote, config, overrides, out } => {
            let cfg = build_config(algo, env, steps, seed, workers, paper, config, &overrides)?;
            let remote = remote.filter(|r| !r.is_empty());
            if bench {
                let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/bench-{}-s{}", cfg.env, cfg.seed)));
                for row in bench_shared(&cfg, &out, remote.as_deref())? {
                    print_summary(&row.algo.to_string(), &row.summary);
                }
                println!("results in {}", out.display());
            } else {
                let out =
                    out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}-s{}", cfg.env, cfg.algo, cfg.seed)));
                let s = train(cfg, &out, remote.as_deref())?;
                print_summary(&out.display().to_string(), &s);
            }
        }
        Command::Resume { run, steps, remote } => {
            let total = match steps {
                Some(s) => {
                    let mut c = TrainConfig::default();
                    c.set("total_steps", &s)?;
                    Some(c.total_steps)
                }
                None => None,
            };
            let s = resume(&run, total, remote.as_deref().filter(|r| !r.is_empty()))?;
            print_summary(&run.display().to_string(), &s);
        }
        Command::Eval { ckpt, episodes, stochastic, remote } => {
            let s = evaluate_checkpoint(&ckpt, episodes, !stochastic, remote.as_deref().filter(|r| !r.is_empty()))?;
            println!(
                "episodes {}  reward {:.6} ± {:.6}  final distance {:.6}",
                s.episodes, s.mean_reward, s.std_reward, s.mean_final_distance
            );
        }
        Command::Plot { csv, window } => {
            for p in export_curves(&csv, window)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Serve { addr, env, max_episode_steps } => {
            let options = ReacherOptions { max_episode_steps, ..Default::default() };
            polgrad::envs::make_env(&env, &options)?;
            let server = Server::bind(&addr, reacher_factory(env, options))?;
            println!("serving on {}", server.local_addr());
            server.join();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
