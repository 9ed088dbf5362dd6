mod common;

use common::*;
use polgrad::acktr::{batch_nstep_returns, nstep_returns};
use polgrad::rollout::{gae, normalize_advantages, rewards_to_go, TrajectoryBatch};
use rand::Rng;

const TOL: f64 = 1e-10;

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn rewards_to_go_and_gae_match_double_sums() {
    let mut r = rng(11);
    for case in 0..100 {
        let n = r.random_range(1..200);
        let (rew, val, mut term, boot) = random_sequence(&mut r, n, 0.05);
        if case % 2 == 0 {
            term[n - 1] = true;
        }
        let gamma = r.random_range(0.8..1.0);
        let lambda = r.random_range(0.0..1.0);
        let rtg = rewards_to_go(&rew, &term, boot, gamma);
        assert!(max_dev(&rtg, &brute_rewards_to_go(&rew, &term, boot, gamma)) < TOL, "case {case}: rewards-to-go");
        let adv = gae(&rew, &val, &term, boot, gamma, lambda);
        assert!(max_dev(&adv, &brute_gae(&rew, &val, &term, boot, gamma, lambda)) < TOL, "case {case}: gae");
    }
}

#[test]
fn lambda_one_is_rewards_to_go_minus_values_exactly() {
    let mut r = rng(12);
    for case in 0..100 {
        let n = r.random_range(1..200);
        let (rew, val, term, boot) = random_sequence(&mut r, n, 0.05);
        let gamma = r.random_range(0.8..1.0);
        let adv = gae(&rew, &val, &term, boot, gamma, 1.0);
        let rtg = rewards_to_go(&rew, &term, boot, gamma);
        for t in 0..n {
            assert_eq!(adv[t], rtg[t] - val[t], "case {case}, t = {t}");
        }
    }
}

#[test]
fn lambda_zero_is_td_residual_exactly() {
    let mut r = rng(13);
    for _ in 0..100 {
        let n = r.random_range(1..100);
        let (rew, val, term, boot) = random_sequence(&mut r, n, 0.1);
        let adv = gae(&rew, &val, &term, boot, 0.97, 0.0);
        for t in 0..n {
            let next = if term[t] { 0.0 } else if t + 1 < n { val[t + 1] } else { boot };
            assert_eq!(adv[t], rew[t] + 0.97 * next - val[t]);
        }
    }
}

#[test]
fn episodes_do_not_leak_across_terminals() {
    let mut r = rng(14);
    let (mut rew, val, mut term, boot) = random_sequence(&mut r, 40, 0.0);
    term[19] = true;
    let before = gae(&rew, &val, &term, boot, 0.99, 0.95);
    let rtg_before = rewards_to_go(&rew, &term, boot, 0.99);
    for x in &mut rew[20..] {
        *x += 100.0;
    }
    let after = gae(&rew, &val, &term, boot, 0.99, 0.95);
    assert_eq!(before[..20], after[..20]);
    assert_eq!(rtg_before[..20], rewards_to_go(&rew, &term, boot, 0.99)[..20]);
}

#[test]
fn terminal_last_row_ignores_bootstrap() {
    let rew = [1.0, 2.0];
    let val = [0.5, 0.25];
    let term = [false, true];
    assert_eq!(gae(&rew, &val, &term, 1e6, 0.9, 0.9), gae(&rew, &val, &term, -3.0, 0.9, 0.9));
    assert_eq!(rewards_to_go(&rew, &term, 1e6, 0.9), rewards_to_go(&rew, &term, -3.0, 0.9));
}

#[test]
fn normalized_advantages_have_zero_mean_unit_std() {
    let mut r = rng(15);
    let adv: Vec<f64> = (0..300).map(|_| 3.0 + 2.0 * normal(&mut r)).collect();
    let z = normalize_advantages(&adv);
    let mean = z.iter().sum::<f64>() / 300.0;
    let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 300.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    assert_eq!(normalize_advantages(&[2.0; 5]), vec![0.0; 5]);
}

/// `t_max`-step return by direct summation: rewards up to the segment end or
/// the episode end, then the value at the segment end if the episode goes on.
fn brute_nstep(rew: &[f64], term: &[bool], val: &[f64], boot: f64, gamma: f64, t_max: usize) -> Vec<f64> {
    let n = rew.len();
    (0..n)
        .map(|t| {
            let end = ((t / t_max) + 1) * t_max;
            let end = end.min(n);
            let mut total = 0.0;
            for i in t..end {
                total += gamma.powi((i - t) as i32) * rew[i];
                if term[i] {
                    return total;
                }
            }
            let tail = if end < n { val[end] } else { boot };
            total + gamma.powi((end - t) as i32) * tail
        })
        .collect()
}

#[test]
fn nstep_returns_match_direct_sums() {
    let mut r = rng(16);
    for case in 0..100 {
        let n = r.random_range(1..150);
        let (rew, val, term, boot) = random_sequence(&mut r, n, 0.05);
        let t_max = r.random_range(1..30);
        let got = nstep_returns(&rew, &term, &val, boot, 0.99, t_max);
        let want = brute_nstep(&rew, &term, &val, boot, 0.99, t_max);
        assert!(max_dev(&got, &want) < TOL, "case {case}");
    }
}

#[test]
fn batch_nstep_returns_respect_worker_cuts() {
    let mut r = rng(17);
    let mut parts = Vec::new();
    let mut want = Vec::new();
    for w in 0..3 {
        let n = 10 + 7 * w;
        let (rew, val, term, boot) = random_sequence(&mut r, n, 0.1);
        want.extend(brute_nstep(&rew, &term, &val, boot, 0.95, 5));
        let mut b = TrajectoryBatch::<f64>::empty(1, 1);
        b.observations = polgrad::diffcore::Tensor::matrix(n, 1, vec![0.0; n]);
        b.actions = polgrad::diffcore::Tensor::matrix(n, 1, vec![0.0; n]);
        b.old_means = b.actions.clone();
        b.old_log_stds = b.actions.clone();
        b.old_log_probs = vec![0.0; n];
        b.rewards = rew;
        b.terminals = term;
        b.values = val;
        b.bootstrap = boot;
        b.estimate(0.95, 0.95, false);
        parts.push(b);
    }
    let batch = TrajectoryBatch::concat(parts);
    assert_eq!(batch.cuts.len(), 2);
    assert!(max_dev(&batch_nstep_returns(&batch, 0.95, 5), &want) < TOL);
}
