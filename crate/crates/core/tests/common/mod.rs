#![allow(dead_code)]

use polgrad::diffcore::Tensor;
use polgrad::policy::{NetConfig, PolicyValueNet, Sharing};
use polgrad::rollout::TrajectoryBatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn small_net(seed: u64, obs: usize, act: usize, hidden: &[usize], sharing: Sharing) -> PolicyValueNet<f64> {
    let cfg = NetConfig { obs_dim: obs, act_dim: act, hidden: hidden.to_vec(), sharing, log_std_init: -0.5 };
    let mut net = PolicyValueNet::new(cfg, &mut rng(seed));
    let mut r = rng(seed ^ 0xA5A5);
    let ls: Vec<f64> = (0..act).map(|_| -0.5 + 0.3 * normal(&mut r)).collect();
    net.log_std = Tensor::vector(ls);
    net
}

/// A batch sampled from `net` on random observations, with old statistics
/// from `net`, random rewards and episode cuts, and normalized GAE.
pub fn synthetic_batch(net: &PolicyValueNet<f64>, n: usize, seed: u64) -> TrajectoryBatch<f64> {
    let mut r = rng(seed);
    let (obs_dim, act_dim) = (net.obs_dim(), net.act_dim());
    let obs: Vec<f64> = (0..n * obs_dim).map(|_| normal(&mut r)).collect();
    let observations = Tensor::matrix(n, obs_dim, obs);
    let mut actions = Vec::with_capacity(n * act_dim);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let d = net.policy_forward(observations.row(i)).unwrap();
        actions.extend(d.sample(&mut r));
        values.push(net.value_forward(observations.row(i)).unwrap());
    }
    let mut batch = TrajectoryBatch::empty(obs_dim, act_dim);
    batch.observations = observations;
    batch.actions = Tensor::matrix(n, act_dim, actions);
    batch.rewards = (0..n).map(|_| normal(&mut r)).collect();
    batch.terminals = (0..n).map(|i| i + 1 == n || r.random::<f64>() < 0.1).collect();
    batch.values = values;
    batch.bootstrap = normal(&mut r);
    batch.refresh_old_policy(net).unwrap();
    batch.estimate(0.99, 0.95, true);
    batch
}

/// Parameters moved by `scale·N(0,1)` in every coordinate.
pub fn perturbed(net: &PolicyValueNet<f64>, scale: f64, seed: u64) -> PolicyValueNet<f64> {
    let mut r = rng(seed);
    let mut out = net.clone();
    let p: Vec<f64> = net.flat().iter().map(|x| x + scale * normal(&mut r)).collect();
    out.set_flat(&p).unwrap();
    out
}

/// Central differences of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let fp = f(&y);
            y[i] = x[i] - h;
            let fm = f(&y);
            y[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = norm(a).max(norm(b));
    if s == 0.0 {
        0.0
    } else {
        norm(&d) / s
    }
}

/// `R̂_t` as an explicit double sum over the rest of the episode.
pub fn brute_rewards_to_go(rewards: &[f64], terminals: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut i = t;
            loop {
                total += gamma.powi((i - t) as i32) * rewards[i];
                if terminals[i] {
                    break;
                }
                if i + 1 == n {
                    total += gamma.powi((n - t) as i32) * bootstrap;
                    break;
                }
                i += 1;
            }
            total
        })
        .collect()
}

/// `Â_t = Σ_i (γλ)^i δ_{t+i}` with `δ` recomputed per term.
pub fn brute_gae(rewards: &[f64], values: &[f64], terminals: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta = |i: usize| {
        let next = if terminals[i] {
            0.0
        } else if i + 1 < n {
            values[i + 1]
        } else {
            bootstrap
        };
        rewards[i] + gamma * next - values[i]
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut i = t;
            loop {
                total += (gamma * lambda).powi((i - t) as i32) * delta(i);
                if terminals[i] || i + 1 == n {
                    break;
                }
                i += 1;
            }
            total
        })
        .collect()
}

/// Random episode layout of length `n` with the given terminal probability.
pub fn random_sequence(r: &mut impl Rng, n: usize, p_terminal: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>, f64) {
    let rewards = (0..n).map(|_| normal(r)).collect();
    let values = (0..n).map(|_| normal(r)).collect();
    let terminals = (0..n).map(|_| r.random::<f64>() < p_terminal).collect();
    (rewards, values, terminals, normal(r))
}

/// Random SPD matrix `MᵀM + n·c·I` of size `n`, row-major.
pub fn random_spd(r: &mut impl Rng, n: usize, shift: f64) -> Vec<f64> {
    let m: Vec<f64> = (0..n * n).map(|_| normal(r)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum::<f64>();
        }
        a[i * n + i] += shift * n as f64;
    }
    a
}

pub fn dense_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let m = nalgebra::DMatrix::from_row_slice(n, n, a);
    let x = m.lu().solve(&nalgebra::DVector::from_column_slice(b)).expect("non-singular");
    x.iter().copied().collect()
}

pub fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..a.len() / n).map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum()).collect()
}

/// Row-major Kronecker product of `a: [p, p]` and `b: [q, q]`.
pub fn kron(a: &[f64], p: usize, b: &[f64], q: usize) -> Vec<f64> {
    let n = p * q;
    let mut out = vec![0.0; n * n];
    for i in 0..p {
        for k in 0..p {
            for j in 0..q {
                for l in 0..q {
                    out[(i * q + j) * n + (k * q + l)] = a[i * p + k] * b[j * q + l];
                }
            }
        }
    }
    out
}
