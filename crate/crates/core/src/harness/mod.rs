//! The collect → update loop, run directories, checkpoints and evaluation.
//!
//! A run directory holds `config.txt`, `runlog.csv` (one row per update),
//! `episodes.csv` (one row per finished episode), `timing.csv` (wall-clock,
//! kept apart so the other logs are reproducible byte for byte),
//! `checkpoint.json`, and the exported `runlog.svg` / `runlog.rolling.csv`.

mod plot;
mod runlog;

pub use plot::{curve_from_samples, export_curves, render_svg, reward_samples, rolling_csv, Curve, ROLLING_HEADER};
pub use runlog::{
    column_names, format_episode, format_row, mean_std, read_table, rolling_stats, LogWriter, RollingWindow, RunTable,
    TableRow, BASE_COLUMNS, EPISODE_COLUMNS, EPISODE_HEADER, RUNLOG_HEADER,
};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acktr::{acktr_update, AcktrState};
use crate::envlink::RemoteEnv;
use crate::envs::{make_reacher, ArmModel, EnvError, Environment, ReacherOptions};
use crate::policy::{NetConfig, PolicyValueNet};
use crate::ppo::{ppo_update, PpoState};
use crate::report::{UpdateError, UpdateReport};
use crate::rollout::{
    collect_parallel, observed_distance, Algo, ConfigError, EpisodeStats, RolloutError, RolloutState, RolloutWorker,
    TrainConfig,
};
use crate::trpo::{trpo_update, TrpoState};

pub const CHECKPOINT_FORMAT: &str = "polgrad-checkpoint v1";
pub const TIMING_HEADER: &str = "# polgrad-timing v1";
pub const TIMING_COLUMNS: [&str; 4] = ["update", "collect_seconds", "update_seconds", "wall_seconds"];

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    ConfigFile(#[from] ConfigError),
    #[error("environment fault: {0}")]
    Env(#[from] EnvError),
    #[error("environment fault during rollout: {0}")]
    Rollout(#[from] RolloutError),
    #[error("update failed: {0}")]
    Update(#[from] UpdateError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// 2 for configuration problems, 3 for environment faults, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::ConfigFile(_) => 2,
            Self::Env(EnvError::Config(_) | EnvError::UnknownEnv(_)) => 2,
            Self::Env(_) => 3,
            Self::Rollout(RolloutError::Env { .. }) => 3,
            _ => 1,
        }
    }
}

/// Episode cap, step budget and target used for the reported experiments.
pub fn apply_reference_preset(cfg: &mut TrainConfig) {
    cfg.max_episode_steps = 2048;
    cfg.total_steps = 1_000_000;
    cfg.horizon = 2048;
}

/// The three configurations of the shared-hyperparameter benchmark: every
/// algorithm uses `base`'s γ, λ, horizon, network, learning rate and trust
/// region. For ACKTR the learning rate caps the step scale and the trust
/// region is `base.delta`.
pub fn bench_shared_configs(base: &TrainConfig) -> Vec<TrainConfig> {
    [Algo::Trpo, Algo::Ppo, Algo::Acktr]
        .into_iter()
        .map(|algo| {
            let mut c = base.clone();
            c.algo = algo;
            c.kfac_delta = base.delta;
            c.kfac_eta_max = base.lr;
            c
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlgoState {
    Trpo(TrpoState<f64>),
    Ppo(PpoState<f64>),
    Acktr(AcktrState<f64>),
}

impl AlgoState {
    pub fn new(net: &PolicyValueNet<f64>, cfg: &TrainConfig) -> Self {
        match cfg.algo {
            Algo::Trpo => Self::Trpo(TrpoState::new(net, cfg)),
            Algo::Ppo => Self::Ppo(PpoState::new(net, cfg)),
            Algo::Acktr => Self::Acktr(AcktrState::new(net)),
        }
    }

    fn algo(&self) -> Algo {
        match self {
            Self::Trpo(_) => Algo::Trpo,
            Self::Ppo(_) => Algo::Ppo,
            Self::Acktr(_) => Algo::Acktr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    fn rebuild(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub net: PolicyValueNet<f64>,
    pub algo: AlgoState,
    pub workers: Vec<RolloutState>,
    pub rng: RngState,
    pub updates: u64,
    pub total_steps: u64,
    pub window: RollingWindow,
}

impl Checkpoint {
    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let ck: Self = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(HarnessError::Config(format!("{}: unsupported checkpoint format `{}`", path.display(), ck.format)));
        }
        Ok(ck)
    }
}

/// A local reacher for `cfg`, or a session with the server at `remote`.
pub fn build_env(cfg: &TrainConfig, remote: Option<&str>) -> Result<Box<dyn Environment>, HarnessError> {
    if let Some(addr) = remote {
        return Ok(Box::new(RemoteEnv::connect(addr, &cfg.env)?));
    }
    let arm = if cfg.arm.is_empty() {
        None
    } else {
        let text = fs::read_to_string(&cfg.arm)
            .map_err(|e| HarnessError::Config(format!("arm file `{}`: {e}", cfg.arm)))?;
        Some(ArmModel::parse(&text)?)
    };
    let options = ReacherOptions { max_episode_steps: cfg.max_episode_steps, randomize_target: cfg.randomize_target, target: None };
    Ok(Box::new(make_reacher(&cfg.env, &options, arm)?))
}

fn net_config(cfg: &TrainConfig, obs_dim: usize, act_dim: usize) -> NetConfig {
    NetConfig { obs_dim, act_dim, hidden: cfg.hidden.clone(), sharing: cfg.sharing, log_std_init: cfg.log_std_init }
}

/// Outcome of one collect → update iteration.
#[derive(Clone, Debug)]
pub struct Iteration {
    pub report: UpdateReport,
    pub episodes: Vec<EpisodeStats>,
    pub collect_seconds: f64,
    pub update_seconds: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: PolicyValueNet<f64>,
    pub algo: AlgoState,
    pub workers: Vec<RolloutWorker<Box<dyn Environment>>>,
    rng: ChaCha8Rng,
    pub updates: u64,
    pub total_steps: u64,
    pub window: RollingWindow,
}

impl Trainer {
    /// Fresh run. Worker `i` samples stream `i` of `cfg.seed`; network
    /// initialisation and update randomness use a separate stream.
    pub fn new(cfg: TrainConfig, remote: Option<&str>) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let workers = (0..cfg.workers)
            .map(|i| Ok(RolloutWorker::new(build_env(&cfg, remote)?, cfg.seed, i as u64)?))
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let spec = workers[0].env.spec().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX);
        let net = PolicyValueNet::new(net_config(&cfg, spec.obs_dim, spec.act_dim), &mut rng);
        let algo = AlgoState::new(&net, &cfg);
        let window = RollingWindow::new(cfg.window);
        Ok(Self { cfg, net, algo, workers, rng, updates: 0, total_steps: 0, window })
    }

    pub fn from_checkpoint(ck: Checkpoint, remote: Option<&str>) -> Result<Self, HarnessError> {
        ck.config.validate()?;
        if ck.algo.algo() != ck.config.algo || ck.workers.len() != ck.config.workers {
            return Err(HarnessError::Config("checkpoint state does not match its config".into()));
        }
        let mut workers = Vec::with_capacity(ck.workers.len());
        for (i, st) in ck.workers.iter().enumerate() {
            let mut w = RolloutWorker::new(build_env(&ck.config, remote)?, ck.config.seed, i as u64)?;
            w.restore(st)?;
            workers.push(w);
        }
        Ok(Self {
            rng: ck.rng.rebuild(),
            cfg: ck.config,
            net: ck.net,
            algo: ck.algo,
            workers,
            updates: ck.updates,
            total_steps: ck.total_steps,
            window: ck.window,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.cfg.clone(),
            net: self.net.clone(),
            algo: self.algo.clone(),
            workers: self.workers.iter().map(RolloutWorker::state).collect(),
            rng: RngState::capture(&self.rng),
            updates: self.updates,
            total_steps: self.total_steps,
            window: self.window.clone(),
        }
    }

    pub fn done(&self) -> bool {
        self.total_steps >= self.cfg.total_steps
    }

    pub fn iterate(&mut self) -> Result<Iteration, HarnessError> {
        let t0 = Instant::now();
        let c = &self.cfg;
        let batch = collect_parallel(&mut self.workers, &self.net, c.horizon, c.gamma, c.lambda_gae, c.normalize_advantages)?;
        let collect_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let report = match &mut self.algo {
            AlgoState::Trpo(s) => trpo_update(&mut self.net, &batch, c, s, &mut self.rng)?,
            AlgoState::Ppo(s) => ppo_update(&mut self.net, &batch, c, s, &mut self.rng)?,
            AlgoState::Acktr(s) => acktr_update(&mut self.net, &batch, c, s, &mut self.rng)?,
        };
        let update_seconds = t1.elapsed().as_secs_f64();
        self.updates += 1;
        self.total_steps += batch.len() as u64;
        for e in &batch.episodes {
            self.window.push(e.reward);
        }
        Ok(Iteration { report, episodes: batch.episodes, collect_seconds, update_seconds })
    }
}

/// Files of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }
    pub fn runlog(&self) -> PathBuf {
        self.root.join("runlog.csv")
    }
    pub fn episodes(&self) -> PathBuf {
        self.root.join("episodes.csv")
    }
    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub updates: u64,
    pub total_steps: u64,
    /// Trailing-window mean and std of episode rewards at the end.
    pub rolling: Option<(f64, f64)>,
}

struct Logs {
    runlog: LogWriter,
    episodes: LogWriter,
    timing: LogWriter,
}

fn run_loop(trainer: &mut Trainer, dir: &RunDir, logs: &mut Logs) -> Result<TrainSummary, HarnessError> {
    let start = Instant::now();
    while !trainer.done() {
        let before = trainer.checkpoint();
        let it = match trainer.iterate() {
            Ok(it) => it,
            Err(e) => {
                before.save(&dir.checkpoint())?;
                return Err(e);
            }
        };
        let (u, s) = (trainer.updates, trainer.total_steps);
        logs.runlog.write_line(&format_row(u, s, &it.episodes, trainer.window.stats(), &it.report))?;
        for e in &it.episodes {
            logs.episodes.write_line(&format_episode(u, s, e))?;
        }
        logs.timing.write_line(&format!(
            "{u},{:.6},{:.6},{:.6}",
            it.collect_seconds,
            it.update_seconds,
            start.elapsed().as_secs_f64()
        ))?;
        if trainer.cfg.checkpoint_every > 0 && u % trainer.cfg.checkpoint_every as u64 == 0 {
            trainer.checkpoint().save(&dir.checkpoint())?;
        }
    }
    trainer.checkpoint().save(&dir.checkpoint())?;
    if !reward_samples(&dir.runlog())?.is_empty() {
        export_curves(&[dir.runlog()], trainer.cfg.window)?;
    }
    Ok(TrainSummary { updates: trainer.updates, total_steps: trainer.total_steps, rolling: trainer.window.stats() })
}

/// Trains into `out`, which is created if needed. Existing logs are replaced.
pub fn train(cfg: TrainConfig, out: &Path, remote: Option<&str>) -> Result<TrainSummary, HarnessError> {
    let mut trainer = Trainer::new(cfg, remote)?;
    fs::create_dir_all(out)?;
    let dir = RunDir::new(out);
    fs::write(dir.config(), trainer.cfg.to_text())?;
    let mut logs = Logs {
        runlog: LogWriter::create(&dir.runlog(), RUNLOG_HEADER, &column_names())?,
        episodes: LogWriter::create(&dir.episodes(), EPISODE_HEADER, &EPISODE_COLUMNS)?,
        timing: LogWriter::create(&dir.timing(), TIMING_HEADER, &TIMING_COLUMNS)?,
    };
    trainer.checkpoint().save(&dir.checkpoint())?;
    run_loop(&mut trainer, &dir, &mut logs)
}

/// Continues the run in `out` from its checkpoint, optionally with a new step
/// budget. Log rows written after the checkpoint are discarded first.
pub fn resume(out: &Path, total_steps: Option<u64>, remote: Option<&str>) -> Result<TrainSummary, HarnessError> {
    let dir = RunDir::new(out);
    let mut ck = Checkpoint::load(&dir.checkpoint())?;
    if let Some(t) = total_steps {
        ck.config.total_steps = t;
    }
    let last = ck.updates;
    let mut trainer = Trainer::from_checkpoint(ck, remote)?;
    fs::write(dir.config(), trainer.cfg.to_text())?;
    let mut logs = Logs {
        runlog: LogWriter::resume(&dir.runlog(), RUNLOG_HEADER, &column_names(), last)?,
        episodes: LogWriter::resume(&dir.episodes(), EPISODE_HEADER, &EPISODE_COLUMNS, last)?,
        timing: LogWriter::resume(&dir.timing(), TIMING_HEADER, &TIMING_COLUMNS, last)?,
    };
    run_loop(&mut trainer, &dir, &mut logs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub algo: Algo,
    pub summary: TrainSummary,
}

/// Runs the three shared-hyperparameter configurations into `out/<algo>` and
/// writes `out/bench.csv` with each run's final trailing-window reward.
pub fn bench_shared(base: &TrainConfig, out: &Path, remote: Option<&str>) -> Result<Vec<BenchRow>, HarnessError> {
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut csv = String::from("# polgrad-bench v1\nalgo,updates,total_steps,rolling_mean,rolling_std\n");
    for cfg in bench_shared_configs(base) {
        let algo = cfg.algo;
        let summary = train(cfg, &out.join(algo.to_string()), remote)?;
        let (m, s) = summary.rolling.map_or((String::new(), String::new()), |(m, s)| (format!("{m:e}"), format!("{s:e}")));
        csv.push_str(&format!("{algo},{},{},{m},{s}\n", summary.updates, summary.total_steps));
        rows.push(BenchRow { algo, summary });
    }
    let curves = rows
        .iter()
        .map(|r| Ok(curve_from_samples(&r.algo.to_string(), &reward_samples(&RunDir::new(out.join(r.algo.to_string())).runlog())?, base.window)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    if curves.iter().all(|c| !c.steps.is_empty()) {
        fs::write(out.join("bench.svg"), render_svg(&base.env, &curves))?;
    }
    fs::write(out.join("bench.csv"), csv)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_final_distance: f64,
}

/// Runs `episodes` full episodes without touching `net`. With `deterministic`
/// the mean action is taken; otherwise actions are sampled from a stream of
/// `seed`.
pub fn evaluate(
    net: &PolicyValueNet<f64>,
    env: &mut dyn Environment,
    episodes: usize,
    deterministic: bool,
    seed: u64,
) -> Result<EvalSummary, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::Config("evaluation needs at least one episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 1);
    env.seed(seed)?;
    let mut rewards = Vec::with_capacity(episodes);
    let mut dists = Vec::with_capacity(episodes);
    let act_dim = env.spec().act_dim;
    for _ in 0..episodes {
        let mut obs = env.reset()?;
        let mut total = 0.0;
        loop {
            let d = net.policy_forward(&obs).map_err(UpdateError::from)?;
            let action = if deterministic { d.mean().to_vec() } else { d.sample(&mut rng) };
            let t = env.step(&action)?;
            total += t.reward;
            obs = t.observation;
            if t.done {
                break;
            }
        }
        rewards.push(total);
        dists.push(observed_distance(&obs, act_dim, &env.spec().target.position));
    }
    let (mean_reward, std_reward) = mean_std(&rewards).expect("episodes > 0");
    let mean_final_distance = mean_std(&dists).expect("episodes > 0").0;
    Ok(EvalSummary { episodes, mean_reward, std_reward, mean_final_distance })
}

/// [`evaluate`] for a checkpoint file on the environment named in its config.
pub fn evaluate_checkpoint(
    path: &Path,
    episodes: usize,
    deterministic: bool,
    remote: Option<&str>,
) -> Result<EvalSummary, HarnessError> {
    let ck = Checkpoint::load(path)?;
    let mut env = build_env(&ck.config, remote)?;
    evaluate(&ck.net, &mut *env, episodes, deterministic, ck.config.seed)
}
