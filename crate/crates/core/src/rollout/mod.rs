//! Trajectory collection and return/advantage estimation.

mod batch;
mod collect;
mod config;

pub use batch::TrajectoryBatch;
pub use collect::{collect_parallel, observed_distance, EpisodeStats, RolloutError, RolloutState, RolloutWorker};
pub use config::{Algo, ConfigError, FisherMode, TrainConfig};

use crate::Scalar;

/// `R̂_t = Σ_{i≥t} γ^{i−t} r_i` within each episode. A non-terminal final row
/// is bootstrapped with `γ^{T−t}·V(s_T)`.
pub fn rewards_to_go<T: Scalar>(rewards: &[T], terminals: &[bool], bootstrap: T, gamma: T) -> Vec<T> {
    assert_eq!(rewards.len(), terminals.len(), "rewards and terminals are not aligned");
    let mut out = vec![T::zero(); rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        if terminals[t] {
            acc = T::zero();
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalized advantage estimate `Â_t = Σ (γλ)^i δ_{t+i}`, reset at terminals.
///
/// Evaluated as `G_t − V(s_t)` with the λ-return
/// `G_t = r_t + γ((1−λ)V(s_{t+1}) + λG_{t+1})`, so `λ = 1` gives exactly
/// `R̂_t − V(s_t)` and `λ = 0` exactly `δ_t`.
pub fn gae<T: Scalar>(rewards: &[T], values: &[T], terminals: &[bool], bootstrap: T, gamma: T, lambda: T) -> Vec<T> {
    let n = rewards.len();
    assert!(values.len() == n && terminals.len() == n, "gae inputs are not aligned");
    let mut out = vec![T::zero(); n];
    let mut g = bootstrap;
    for t in (0..n).rev() {
        let next = if terminals[t] {
            T::zero()
        } else if t + 1 < n {
            (T::one() - lambda) * values[t + 1] + lambda * g
        } else {
            bootstrap
        };
        g = rewards[t] + gamma * next;
        out[t] = g - values[t];
    }
    out
}

/// Zero mean, unit population standard deviation; all zeros if the spread is
/// below `1e-8`.
pub fn normalize_advantages<T: Scalar>(adv: &[T]) -> Vec<T> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = T::from_usize_lossy(adv.len());
    let mean = adv.iter().copied().sum::<T>() / n;
    let var = adv.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if !(std >= T::lit(1e-8)) {
        return vec![T::zero(); adv.len()];
    }
    adv.iter().map(|&a| (a - mean) / std).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewards_to_go_examples() {
        assert_eq!(rewards_to_go(&[1.0, 2.0, 3.0], &[false, false, true], 9.0, 0.0), vec![1.0, 2.0, 3.0]);
        assert_eq!(rewards_to_go(&[1.0, 1.0, 1.0], &[false, false, true], 0.0, 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(rewards_to_go(&[1.0], &[false], 4.0, 0.5), vec![3.0]);
    }

    #[test]
    fn gae_degenerate_gamma() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4];
        let a = gae(&r, &v, &[false, true, false], 2.0, 0.0, 0.95);
        assert_eq!(a, vec![0.7, -2.1, 0.9]);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_advantages(&[3.0, 3.0, 3.0]), vec![0.0; 3]);
        assert_eq!(normalize_advantages(&[-1.0, 1.0]), vec![-1.0, 1.0]);
    }
}
