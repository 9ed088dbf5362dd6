use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::envs::{EnvError, Environment, ReacherState};
use crate::policy::{PolicyError, PolicyValueNet};
use crate::Scalar;

use super::{normalize_advantages, TrajectoryBatch};

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("environment fault at step {step}: {source}")]
    Env { step: u64, source: EnvError },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Undiscounted sum of rewards.
    pub reward: f64,
    pub length: usize,
    /// End-effector distance to the target at the last step.
    pub final_distance: f64,
}

/// Resumable part of a worker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutState {
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub observation: Option<Vec<f64>>,
    pub episode_reward: f64,
    pub episode_length: usize,
    pub steps_taken: u64,
    pub env: Option<ReacherState>,
}

/// One environment plus the sampling stream and the in-progress episode.
pub struct RolloutWorker<E> {
    pub env: E,
    rng: ChaCha8Rng,
    observation: Option<Vec<f64>>,
    episode_reward: f64,
    episode_length: usize,
    steps_taken: u64,
}

/// End-effector distance read from an observation `[joints, position, quaternion]`.
pub fn observed_distance(obs: &[f64], act_dim: usize, target: &[f64; 3]) -> f64 {
    let p = &obs[act_dim..act_dim + 3];
    (0..3).map(|i| (p[i] - target[i]).powi(2)).sum::<f64>().sqrt()
}

impl<E: Environment> RolloutWorker<E> {
    /// Sampling stream `index` of `seed`; the environment is seeded with `seed + index`.
    pub fn new(mut env: E, seed: u64, index: u64) -> Result<Self, EnvError> {
        env.seed(seed.wrapping_add(index))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Ok(Self { env, rng, observation: None, episode_reward: 0.0, episode_length: 0, steps_taken: 0 })
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn state(&self) -> RolloutState {
        RolloutState {
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
            observation: self.observation.clone(),
            episode_reward: self.episode_reward,
            episode_length: self.episode_length,
            steps_taken: self.steps_taken,
            env: self.env.snapshot(),
        }
    }

    pub fn restore(&mut self, state: &RolloutState) -> Result<(), EnvError> {
        let mut rng = ChaCha8Rng::from_seed(state.rng_seed);
        rng.set_stream(state.rng_stream);
        rng.set_word_pos(state.rng_word_pos);
        self.rng = rng;
        self.observation = state.observation.clone();
        self.episode_reward = state.episode_reward;
        self.episode_length = state.episode_length;
        self.steps_taken = state.steps_taken;
        if let Some(env) = &state.env {
            self.env.restore(env)?;
        }
        Ok(())
    }

    fn fault(&self, source: EnvError) -> RolloutError {
        RolloutError::Env { step: self.steps_taken, source }
    }

    /// Exactly `steps` transitions. Episodes ending inside the batch reset the
    /// environment; the last row is bootstrapped with `V(s_T)` unless terminal.
    pub fn collect<T: Scalar>(&mut self, net: &PolicyValueNet<T>, steps: usize) -> Result<TrajectoryBatch<T>, RolloutError> {
        let spec = self.env.spec().clone();
        let (n, m) = (spec.obs_dim, spec.act_dim);
        let mut obs_rows = Vec::with_capacity(steps * n);
        let mut act_rows = Vec::with_capacity(steps * m);
        let mut mean_rows = Vec::with_capacity(steps * m);
        let mut ls_rows = Vec::with_capacity(steps * m);
        let mut batch = TrajectoryBatch::empty(n, m);
        for _ in 0..steps {
            let obs = match self.observation.take() {
                Some(o) => o,
                None => self.env.reset().map_err(|e| self.fault(e))?,
            };
            let obs_t: Vec<T> = obs.iter().map(|&x| T::lit(x)).collect();
            let dist = net.policy_forward(&obs_t)?;
            let value = net.value_forward(&obs_t)?;
            let action = dist.sample(&mut self.rng);
            let log_prob = dist.log_prob(&action);
            let action_f: Vec<f64> = action.iter().map(|a| a.as_f64()).collect();
            let tr = self.env.step(&action_f).map_err(|e| self.fault(e))?;
            self.steps_taken += 1;
            self.episode_reward += tr.reward;
            self.episode_length += 1;

            obs_rows.extend_from_slice(&obs_t);
            act_rows.extend_from_slice(&action);
            mean_rows.extend_from_slice(dist.mean());
            ls_rows.extend_from_slice(dist.log_std());
            batch.rewards.push(T::lit(tr.reward));
            batch.terminals.push(tr.done);
            batch.old_log_probs.push(log_prob);
            batch.values.push(value);

            if tr.done {
                batch.episodes.push(EpisodeStats {
                    reward: self.episode_reward,
                    length: self.episode_length,
                    final_distance: observed_distance(&tr.observation, m, &spec.target.position),
                });
                self.episode_reward = 0.0;
                self.episode_length = 0;
                self.observation = None;
            } else {
                self.observation = Some(tr.observation);
            }
        }
        batch.bootstrap = match &self.observation {
            Some(o) => {
                let o: Vec<T> = o.iter().map(|&x| T::lit(x)).collect();
                net.value_forward(&o)?
            }
            None => T::zero(),
        };
        batch.observations = Tensor::matrix(steps, n, obs_rows);
        batch.actions = Tensor::matrix(steps, m, act_rows);
        batch.old_means = Tensor::matrix(steps, m, mean_rows);
        batch.old_log_stds = Tensor::matrix(steps, m, ls_rows);
        Ok(batch)
    }
}

/// Collects `horizon` steps split across `workers` (earlier workers take the
/// remainder), estimates each segment, and concatenates in worker order.
/// Advantages are normalized over the merged batch when requested.
pub fn collect_parallel<T: Scalar, E: Environment>(
    workers: &mut [RolloutWorker<E>],
    net: &PolicyValueNet<T>,
    horizon: usize,
    gamma: T,
    lambda: T,
    normalize: bool,
) -> Result<TrajectoryBatch<T>, RolloutError> {
    let w = workers.len();
    assert!(w > 0 && horizon >= w, "need 1..=horizon workers");
    let share = |i: usize| horizon / w + usize::from(i < horizon % w);
    let run = |(i, worker): (usize, &mut RolloutWorker<E>)| -> Result<TrajectoryBatch<T>, RolloutError> {
        let mut b = worker.collect(net, share(i))?;
        b.estimate(gamma, lambda, false);
        Ok(b)
    };
    let parts: Vec<Result<TrajectoryBatch<T>, RolloutError>> = if w == 1 {
        workers.iter_mut().enumerate().map(run).collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = workers.iter_mut().enumerate().map(|p| s.spawn(move || run(p))).collect();
            handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
        })
    };
    let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut batch = TrajectoryBatch::concat(parts);
    if normalize {
        batch.advantages = normalize_advantages(&batch.advantages);
    }
    Ok(batch)
}
