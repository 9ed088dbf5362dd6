use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor};
use crate::policy::{log_prob_graph, PolicyError, PolicyValueNet};
use crate::Scalar;

use super::{gae, normalize_advantages, rewards_to_go, EpisodeStats};

/// Time-aligned rows of one or more rollout segments.
///
/// `returns` and `advantages` stay empty until [`estimate`](Self::estimate)
/// runs. Batches concatenated with [`concat`](Self::concat) must be estimated
/// first, since each segment carries its own bootstrap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch<T> {
    pub observations: Tensor<T>,
    pub actions: Tensor<T>,
    pub rewards: Vec<T>,
    pub terminals: Vec<bool>,
    pub old_log_probs: Vec<T>,
    pub old_means: Tensor<T>,
    pub old_log_stds: Tensor<T>,
    pub values: Vec<T>,
    /// `V(s_T)` after the last row; ignored when that row is terminal.
    pub bootstrap: T,
    pub returns: Vec<T>,
    pub advantages: Vec<T>,
    /// Episodes that finished inside this batch.
    pub episodes: Vec<EpisodeStats>,
    /// `(end row, bootstrap)` of every segment but the last after [`concat`](Self::concat).
    #[serde(default)]
    pub cuts: Vec<(usize, T)>,
}

impl<T: Scalar> TrajectoryBatch<T> {
    pub fn empty(obs_dim: usize, act_dim: usize) -> Self {
        Self {
            observations: Tensor::zeros(&[0, obs_dim]),
            actions: Tensor::zeros(&[0, act_dim]),
            rewards: Vec::new(),
            terminals: Vec::new(),
            old_log_probs: Vec::new(),
            old_means: Tensor::zeros(&[0, act_dim]),
            old_log_stds: Tensor::zeros(&[0, act_dim]),
            values: Vec::new(),
            bootstrap: T::zero(),
            returns: Vec::new(),
            advantages: Vec::new(),
            episodes: Vec::new(),
            cuts: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.cols()
    }

    pub fn act_dim(&self) -> usize {
        self.actions.cols()
    }

    pub fn is_estimated(&self) -> bool {
        self.advantages.len() == self.len() && self.returns.len() == self.len()
    }

    /// Fills `returns` with rewards-to-go and `advantages` with GAE(λ).
    pub fn estimate(&mut self, gamma: T, lambda: T, normalize: bool) {
        self.returns = rewards_to_go(&self.rewards, &self.terminals, self.bootstrap, gamma);
        let adv = gae(&self.rewards, &self.values, &self.terminals, self.bootstrap, gamma, lambda);
        self.advantages = if normalize { normalize_advantages(&adv) } else { adv };
    }

    /// Recomputes `old_log_probs`, `old_means` and `old_log_stds` through the
    /// recorded forward pass of `net`, so that update rules evaluated on the
    /// same tape see a ratio of exactly one at `net`'s parameters.
    pub fn refresh_old_policy(&mut self, net: &PolicyValueNet<T>) -> Result<(), PolicyError> {
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let obs = tape.constant(self.observations.clone());
        let acts = tape.constant(self.actions.clone());
        let p = vars.policy_dist(&mut tape, obs, self.obs_dim())?;
        let lp = log_prob_graph(&mut tape, p.mean, p.log_std, acts);
        let b = self.len();
        let ls = tape.broadcast_rows(p.log_std, b);
        self.old_log_probs = tape.value(lp).data().to_vec();
        self.old_means = tape.value(p.mean).clone();
        self.old_log_stds = tape.value(ls).clone();
        Ok(())
    }

    /// Rows `idx` in order, keeping returns and advantages. Bootstrap and
    /// episode stats are dropped.
    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |v: &[T]| -> Vec<T> { if v.is_empty() { Vec::new() } else { idx.iter().map(|&i| v[i]).collect() } };
        Self {
            observations: self.observations.select_rows(idx),
            actions: self.actions.select_rows(idx),
            rewards: pick(&self.rewards),
            terminals: idx.iter().map(|&i| self.terminals[i]).collect(),
            old_log_probs: pick(&self.old_log_probs),
            old_means: self.old_means.select_rows(idx),
            old_log_stds: self.old_log_stds.select_rows(idx),
            values: pick(&self.values),
            bootstrap: T::zero(),
            returns: pick(&self.returns),
            advantages: pick(&self.advantages),
            episodes: Vec::new(),
            cuts: Vec::new(),
        }
    }

    /// Stacks estimated batches in order.
    pub fn concat(parts: Vec<Self>) -> Self {
        let mut iter = parts.into_iter();
        let Some(mut out) = iter.next() else {
            panic!("concat of zero batches");
        };
        for p in iter {
            assert!(out.is_estimated() && p.is_estimated(), "concat needs estimated batches");
            let offset = out.len();
            out.cuts.push((offset, out.bootstrap));
            out.cuts.extend(p.cuts.iter().map(|&(e, b)| (e + offset, b)));
            out.observations = stack(&out.observations, &p.observations);
            out.actions = stack(&out.actions, &p.actions);
            out.old_means = stack(&out.old_means, &p.old_means);
            out.old_log_stds = stack(&out.old_log_stds, &p.old_log_stds);
            out.rewards.extend(p.rewards);
            out.terminals.extend(p.terminals);
            out.old_log_probs.extend(p.old_log_probs);
            out.values.extend(p.values);
            out.returns.extend(p.returns);
            out.advantages.extend(p.advantages);
            out.episodes.extend(p.episodes);
            out.bootstrap = p.bootstrap;
        }
        out
    }
}

fn stack<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.cols(), b.cols(), "stacking tensors of different width");
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(a.rows() + b.rows(), a.cols(), data)
}
