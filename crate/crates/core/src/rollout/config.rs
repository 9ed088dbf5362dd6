use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::optim::OptimizerKind;
use crate::policy::Sharing;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algo {
    Trpo,
    Ppo,
    Acktr,
}

impl FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trpo" => Ok(Self::Trpo),
            "ppo" => Ok(Self::Ppo),
            "acktr" => Ok(Self::Acktr),
            _ => Err(format!("unknown algorithm `{s}` (trpo|ppo|acktr)")),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Trpo => "trpo",
            Self::Ppo => "ppo",
            Self::Acktr => "acktr",
        })
    }
}

/// How K-FAC output gradients are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FisherMode {
    /// Targets drawn from the model's own output distribution.
    True,
    /// Batch actions and returns as targets.
    Empirical,
}

impl FromStr for FisherMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "true" => Ok(Self::True),
            "empirical" => Ok(Self::Empirical),
            _ => Err(format!("unknown fisher mode `{s}` (true|empirical)")),
        }
    }
}

impl std::fmt::Display for FisherMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::True => "true",
            Self::Empirical => "empirical",
        })
    }
}

/// Every knob of a training run. Stored as flat `key = value` text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algo: Algo,
    pub env: String,
    /// Optional arm geometry file replacing the built-in model.
    pub arm: String,
    pub seed: u64,
    pub total_steps: u64,
    /// Environment steps per update, summed over workers.
    pub horizon: usize,
    pub workers: usize,
    pub max_episode_steps: usize,
    pub randomize_target: bool,

    pub gamma: f64,
    pub lambda_gae: f64,
    pub normalize_advantages: bool,

    pub hidden: Vec<usize>,
    pub sharing: Sharing,
    pub log_std_init: f64,

    /// PPO policy step size.
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub vf_lr: f64,
    pub vf_epochs: usize,
    pub vf_minibatch: usize,

    pub delta: f64,
    pub backtrack_coef: f64,
    pub max_backtracks: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub cg_damping: f64,

    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    /// Stop PPO epochs once measured KL exceeds this; 0 disables.
    pub target_kl: f64,

    pub kfac_delta: f64,
    pub kfac_eta_max: f64,
    pub kfac_decay: f64,
    pub kfac_refresh: usize,
    pub kfac_damping: f64,
    pub t_max: usize,
    pub fisher: FisherMode,

    pub checkpoint_every: usize,
    pub window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Ppo,
            env: "Reach2D-v0".into(),
            arm: String::new(),
            seed: 0,
            total_steps: 100_000,
            horizon: 2048,
            workers: 1,
            max_episode_steps: 512,
            randomize_target: false,
            gamma: 0.99,
            lambda_gae: 0.95,
            normalize_advantages: true,
            hidden: vec![64, 64],
            sharing: Sharing::Disjoint,
            log_std_init: -2.3,
            lr: 3e-4,
            optimizer: OptimizerKind::Adam,
            vf_lr: 1e-3,
            vf_epochs: 10,
            vf_minibatch: 256,
            delta: 0.01,
            backtrack_coef: 0.8,
            max_backtracks: 10,
            cg_iters: 10,
            cg_tol: 1e-10,
            cg_damping: 0.1,
            clip_eps: 0.2,
            epochs: 10,
            minibatch: 256,
            value_coef: 0.5,
            target_kl: 0.0,
            kfac_delta: 0.002,
            kfac_eta_max: 0.25,
            kfac_decay: 0.99,
            kfac_refresh: 10,
            kfac_damping: 0.01,
            t_max: 64,
            fisher: FisherMode::True,
            checkpoint_every: 10,
            window: 100,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError>
where
    V::Err: std::fmt::Display,
{
    value.parse::<V>().map_err(|e| ConfigError::Invalid { key: key.into(), message: e.to_string() })
}

impl TrainConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("expected `key = value`, got `{line}`") });
            };
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "algo" => self.algo = parse(key, v)?,
            "env" => self.env = v.to_string(),
            "arm" => self.arm = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            "total_steps" => self.total_steps = parse::<f64>(key, v).and_then(|x| steps(key, x))?,
            "horizon" => self.horizon = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "max_episode_steps" => self.max_episode_steps = parse(key, v)?,
            "randomize_target" => self.randomize_target = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lambda_gae" => self.lambda_gae = parse(key, v)?,
            "normalize_advantages" => self.normalize_advantages = parse(key, v)?,
            "hidden" => {
                self.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_, _>>()?
                }
            }
            "sharing" => self.sharing = parse(key, v)?,
            "log_std_init" => self.log_std_init = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "optimizer" => self.optimizer = parse(key, v)?,
            "vf_lr" => self.vf_lr = parse(key, v)?,
            "vf_epochs" => self.vf_epochs = parse(key, v)?,
            "vf_minibatch" => self.vf_minibatch = parse(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "backtrack_coef" => self.backtrack_coef = parse(key, v)?,
            "max_backtracks" => self.max_backtracks = parse(key, v)?,
            "cg_iters" => self.cg_iters = parse(key, v)?,
            "cg_tol" => self.cg_tol = parse(key, v)?,
            "cg_damping" => self.cg_damping = parse(key, v)?,
            "clip_eps" => self.clip_eps = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "minibatch" => self.minibatch = parse(key, v)?,
            "value_coef" => self.value_coef = parse(key, v)?,
            "target_kl" => self.target_kl = parse(key, v)?,
            "kfac_delta" => self.kfac_delta = parse(key, v)?,
            "kfac_eta_max" => self.kfac_eta_max = parse(key, v)?,
            "kfac_decay" => self.kfac_decay = parse(key, v)?,
            "kfac_refresh" => self.kfac_refresh = parse(key, v)?,
            "kfac_damping" => self.kfac_damping = parse(key, v)?,
            "t_max" => self.t_max = parse(key, v)?,
            "fisher" => self.fisher = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# polgrad train config\n");
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let rows: Vec<(&str, String)> = vec![
            ("algo", self.algo.to_string()),
            ("env", self.env.clone()),
            ("arm", self.arm.clone()),
            ("seed", self.seed.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("horizon", self.horizon.to_string()),
            ("workers", self.workers.to_string()),
            ("max_episode_steps", self.max_episode_steps.to_string()),
            ("randomize_target", self.randomize_target.to_string()),
            ("gamma", self.gamma.to_string()),
            ("lambda_gae", self.lambda_gae.to_string()),
            ("normalize_advantages", self.normalize_advantages.to_string()),
            ("hidden", hidden.join(",")),
            ("sharing", self.sharing.to_string()),
            ("log_std_init", self.log_std_init.to_string()),
            ("lr", self.lr.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("vf_lr", self.vf_lr.to_string()),
            ("vf_epochs", self.vf_epochs.to_string()),
            ("vf_minibatch", self.vf_minibatch.to_string()),
            ("delta", self.delta.to_string()),
            ("backtrack_coef", self.backtrack_coef.to_string()),
            ("max_backtracks", self.max_backtracks.to_string()),
            ("cg_iters", self.cg_iters.to_string()),
            ("cg_tol", self.cg_tol.to_string()),
            ("cg_damping", self.cg_damping.to_string()),
            ("clip_eps", self.clip_eps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("minibatch", self.minibatch.to_string()),
            ("value_coef", self.value_coef.to_string()),
            ("target_kl", self.target_kl.to_string()),
            ("kfac_delta", self.kfac_delta.to_string()),
            ("kfac_eta_max", self.kfac_eta_max.to_string()),
            ("kfac_decay", self.kfac_decay.to_string()),
            ("kfac_refresh", self.kfac_refresh.to_string()),
            ("kfac_damping", self.kfac_damping.to_string()),
            ("t_max", self.t_max.to_string()),
            ("fisher", self.fisher.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("window", self.window.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| Err(ConfigError::Invalid { key: key.into(), message: message.into() });
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !unit(self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if !unit(self.lambda_gae) {
            return bad("lambda_gae", "must lie in [0, 1]");
        }
        if self.horizon == 0 {
            return bad("horizon", "must be positive");
        }
        if self.workers == 0 || self.workers > self.horizon {
            return bad("workers", "must be between 1 and horizon");
        }
        if self.max_episode_steps == 0 {
            return bad("max_episode_steps", "must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "layer widths must be positive");
        }
        if self.sharing == Sharing::SharedTrunk && self.hidden.is_empty() {
            return bad("sharing", "a shared trunk needs at least one hidden layer");
        }
        if !(self.lr >= 0.0) || !(self.vf_lr >= 0.0) {
            return bad("lr", "learning rates must be non-negative");
        }
        if !pos(self.delta) {
            return bad("delta", "must be positive");
        }
        if !(self.backtrack_coef > 0.0 && self.backtrack_coef < 1.0) {
            return bad("backtrack_coef", "must lie in (0, 1)");
        }
        if self.cg_iters == 0 {
            return bad("cg_iters", "must be positive");
        }
        if !(self.cg_tol >= 0.0) {
            return bad("cg_tol", "must be non-negative");
        }
        if !pos(self.cg_damping) {
            return bad("cg_damping", "must be positive");
        }
        if !pos(self.clip_eps) {
            return bad("clip_eps", "must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.vf_minibatch == 0 {
            return bad("epochs", "epochs and minibatch sizes must be positive");
        }
        if !(self.value_coef >= 0.0) || !(self.target_kl >= 0.0) {
            return bad("value_coef", "value_coef and target_kl must be non-negative");
        }
        if !pos(self.kfac_delta) || !pos(self.kfac_eta_max) || !pos(self.kfac_damping) {
            return bad("kfac_delta", "kfac_delta, kfac_eta_max and kfac_damping must be positive");
        }
        if !(0.0..1.0).contains(&self.kfac_decay) {
            return bad("kfac_decay", "must lie in [0, 1)");
        }
        if self.kfac_refresh == 0 || self.t_max == 0 {
            return bad("kfac_refresh", "kfac_refresh and t_max must be positive");
        }
        if self.window == 0 {
            return bad("window", "must be positive");
        }
        Ok(())
    }
}

fn steps(key: &str, x: f64) -> Result<u64, ConfigError> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 {
        Ok(x as u64)
    } else {
        Err(ConfigError::Invalid { key: key.into(), message: format!("{x} is not a step count") })
    }
}
