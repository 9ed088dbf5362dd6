//! Actor-critic with Kronecker-factored natural gradients.
//!
//! Each affine layer keeps running factors `A = E[ā āᵀ]` and `G = E[g gᵀ]`;
//! the natural gradient of a layer is `(A+λ_A I)⁻¹ ∇W̄ (G+λ_G I)⁻¹`. The
//! critic is a unit-variance Gaussian on `V(s)`, so its Fisher equals the
//! Gauss-Newton matrix. The state-independent `log_std` uses its exact
//! Fisher, `2·I`.

mod kfac;

pub use kfac::{
    accumulate_factors, factored_damping, kfac_step, split_bias, stack_bias, trust_region_rescale, KfacLayerState,
};

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::policy::{entropy_graph, log_prob_graph, PolicyValueNet, Sharing};
use crate::report::{UpdateError, UpdateReport};
use crate::rollout::{normalize_advantages, rewards_to_go, FisherMode, TrainConfig, TrajectoryBatch};
use crate::trpo::mean_kl;
use crate::Scalar;

/// n-step returns over consecutive segments of `t_max` rows.
///
/// Within a segment `R` starts at 0 after a terminal row and at the value of
/// the state following the segment otherwise (`values[end]`, or `bootstrap`
/// after the last row), then `R ← r_i + γR` backwards.
pub fn nstep_returns<T: Scalar>(
    rewards: &[T],
    terminals: &[bool],
    values: &[T],
    bootstrap: T,
    gamma: T,
    t_max: usize,
) -> Vec<T> {
    let n = rewards.len();
    assert!(terminals.len() == n && values.len() == n, "nstep inputs are not aligned");
    assert!(t_max > 0, "t_max must be positive");
    let mut out = vec![T::zero(); n];
    let mut start = 0;
    while start < n {
        let end = (start + t_max).min(n);
        let mut r = if terminals[end - 1] {
            T::zero()
        } else if end < n {
            values[end]
        } else {
            bootstrap
        };
        for i in (start..end).rev() {
            if terminals[i] {
                r = T::zero();
            }
            r = rewards[i] + gamma * r;
            out[i] = r;
        }
        start = end;
    }
    out
}

/// The same segmentation evaluated through [`rewards_to_go`] piece by piece.
pub fn nstep_returns_by_segments<T: Scalar>(
    rewards: &[T],
    terminals: &[bool],
    values: &[T],
    bootstrap: T,
    gamma: T,
    t_max: usize,
) -> Vec<T> {
    let n = rewards.len();
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(t_max) {
        let end = (start + t_max).min(n);
        let boot = if end < n { values[end] } else { bootstrap };
        out.extend(rewards_to_go(&rewards[start..end], &terminals[start..end], boot, gamma));
    }
    out
}

/// `½·mean((V(s_t) − target_t)²)`: negative log-likelihood of a unit-variance
/// Gaussian critic, up to a constant.
pub fn critic_gauss_newton_loss<T: Scalar>(
    net: &PolicyValueNet<T>,
    observations: &Tensor<T>,
    targets: &[T],
) -> Result<T, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let obs = tape.constant(observations.clone());
    let v = vars.value(&mut tape, obs, net.obs_dim())?;
    let t = tape.constant(Tensor::vector(targets.to_vec()));
    let d = tape.sub(v.value, t);
    let sq = tape.square(d);
    let m = tape.mean(sq);
    let l = tape.scale(m, T::lit(0.5));
    Ok(tape.value(l).item())
}

/// Records `mean(logπ(a_t|s_t)·Â_t)` from distribution nodes.
pub fn actor_objective_graph<T: Scalar>(tape: &mut Tape<T>, mean: Var, log_std: Var, actions: &Tensor<T>, adv: &[T]) -> Var {
    let acts = tape.constant(actions.clone());
    let lp = log_prob_graph(tape, mean, log_std, acts);
    let a = tape.constant(Tensor::vector(adv.to_vec()));
    let w = tape.mul(lp, a);
    tape.mean(w)
}

/// The actor objective of `net` on the batch actions with advantages `adv`.
pub fn actor_objective<T: Scalar>(net: &PolicyValueNet<T>, batch: &TrajectoryBatch<T>, adv: &[T]) -> Result<T, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let obs = tape.constant(batch.observations.clone());
    let p = vars.policy_dist(&mut tape, obs, net.obs_dim())?;
    let j = actor_objective_graph(&mut tape, p.mean, p.log_std, &batch.actions, adv);
    Ok(tape.value(j).item())
}

/// Gradient of [`actor_objective`] in [`PolicyValueNet::policy_flat`] order.
pub fn actor_gradient<T: Scalar>(net: &PolicyValueNet<T>, batch: &TrajectoryBatch<T>, adv: &[T]) -> Result<Vec<T>, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let obs = tape.constant(batch.observations.clone());
    let p = vars.policy_dist(&mut tape, obs, net.obs_dim())?;
    let j = actor_objective_graph(&mut tape, p.mean, p.log_std, &batch.actions, adv);
    let g = tape.backward_wrt(j, &vars.policy_group())?;
    let refs: Vec<&Tensor<T>> = g.iter().collect();
    Ok(crate::diffcore::flatten_params(&refs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcktrState<T> {
    /// One entry per affine layer, in trunk, policy, value order.
    pub layers: Vec<KfacLayerState<T>>,
    pub updates: u64,
}

impl<T: Scalar> AcktrState<T> {
    pub fn new(net: &PolicyValueNet<T>) -> Self {
        let layers =
            net.layer_shapes().iter().enumerate().map(|(i, &(inp, out))| KfacLayerState::new(i, inp, out)).collect();
        Self { layers, updates: 0 }
    }
}

/// [`nstep_returns`] over each worker segment of a concatenated batch.
pub fn batch_nstep_returns<T: Scalar>(batch: &TrajectoryBatch<T>, gamma: T, t_max: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(batch.len());
    let mut start = 0;
    let ends = batch.cuts.iter().copied().chain(std::iter::once((batch.len(), batch.bootstrap)));
    for (end, boot) in ends {
        let r = start..end;
        out.extend(nstep_returns(
            &batch.rewards[r.clone()],
            &batch.terminals[r.clone()],
            &batch.values[r],
            boot,
            gamma,
            t_max,
        ));
        start = end;
    }
    out
}

/// One ACKTR iteration. The actor ascends `mean(logπ(a|s)·Â)` with
/// `Â = R − V(s)` from n-step returns; the critic descends the Gauss-Newton
/// loss against the same returns. Disjoint networks get one trust-region
/// scale per network, a shared trunk gets a single joint scale.
pub fn acktr_update<T: Scalar, R: Rng + ?Sized>(
    net: &mut PolicyValueNet<T>,
    batch: &TrajectoryBatch<T>,
    cfg: &TrainConfig,
    state: &mut AcktrState<T>,
    rng: &mut R,
) -> Result<UpdateReport, UpdateError> {
    let n = batch.len();
    if n == 0 || batch.values.len() != n {
        return Err(UpdateError::Config("acktr needs a non-empty batch with value predictions".into()));
    }
    if state.layers.len() != net.layer_shapes().len() {
        return Err(UpdateError::Config("acktr state was built for a different network".into()));
    }
    let gamma = T::lit(cfg.gamma);
    let damping = T::lit(cfg.kfac_damping);
    let returns = batch_nstep_returns(batch, gamma, cfg.t_max);
    let raw_adv: Vec<T> = returns.iter().zip(&batch.values).map(|(&r, &v)| r - v).collect();
    let adv = if cfg.normalize_advantages { normalize_advantages(&raw_adv) } else { raw_adv };
    let mut batch = batch.clone();
    batch.refresh_old_policy(net)?;

    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let obs = tape.constant(batch.observations.clone());
    let j = vars.joint(&mut tape, obs, net.obs_dim())?;
    let actor_obj = actor_objective_graph(&mut tape, j.mean, j.log_std, &batch.actions, &adv);
    let ret_c = tape.constant(Tensor::vector(returns.clone()));
    let resid = tape.sub(j.value, ret_c);
    let sq = tape.square(resid);
    let msq = tape.mean(sq);
    let critic_loss = tape.scale(msq, T::lit(0.5));

    // Sampled log-likelihood whose per-row output gradients feed the G factors.
    let (fisher_actions, fisher_values) = match cfg.fisher {
        FisherMode::True => {
            let mean = tape.value(j.mean).clone();
            let std: Vec<T> = tape.value(j.log_std).data().iter().map(|s| s.exp()).collect();
            let m = std.len();
            let a = Tensor::matrix(
                n,
                m,
                (0..n * m).map(|k| mean.data()[k] + std[k % m] * T::lit(rng.sample::<f64, _>(StandardNormal))).collect(),
            );
            let v: Vec<T> =
                tape.value(j.value).data().iter().map(|&v| v + T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
            (a, v)
        }
        FisherMode::Empirical => (batch.actions.clone(), returns.clone()),
    };
    let fa = tape.constant(fisher_actions);
    let flp = log_prob_graph(&mut tape, j.mean, j.log_std, fa);
    let flp_sum = tape.sum(flp);
    let fv = tape.constant(Tensor::vector(fisher_values));
    let vres = tape.sub(fv, j.value);
    let vsq = tape.square(vres);
    let vsum = tape.sum(vsq);
    let vll = tape.scale(vsum, T::lit(-0.5));
    let fisher_ll = tape.add(flp_sum, vll);

    let all = vars.all();
    let g_actor = tape.backward_wrt(actor_obj, &all)?;
    let g_critic = tape.backward_wrt(critic_loss, &all)?;
    let pre: Vec<Var> = j.layers.iter().map(|l| l.preactivation).collect();
    let g_pre = tape.backward_wrt(fisher_ll, &pre)?;

    let decay = T::lit(cfg.kfac_decay);
    for (trace, g) in j.layers.iter().zip(&g_pre) {
        accumulate_factors(&mut state.layers[trace.layer], tape.value(trace.input), g, decay)?;
    }

    fn grad_of<'a, T>(all: &[Var], grads: &'a [Tensor<T>], v: Var) -> &'a Tensor<T> {
        &grads[all.iter().position(|&x| x == v).expect("bound variable")]
    }
    let actor_layers = net.trunk.as_ref().map_or(0, |t| t.layers.len()) + net.policy.layers.len();
    let shared = net.sharing() == Sharing::SharedTrunk;
    let vc = T::lit(cfg.value_coef);

    // Natural directions keyed by variable; quadratic forms per trust-region group.
    let mut direction: HashMap<Var, Vec<T>> = HashMap::new();
    let (mut quad_actor, mut quad_critic) = (T::zero(), T::zero());
    for trace in &j.layers {
        let is_actor = trace.layer < actor_layers;
        let raw = |w: Var| -> Vec<T> {
            let ga = grad_of(&all, &g_actor, w).data();
            let gc = grad_of(&all, &g_critic, w).data();
            if shared {
                ga.iter().zip(gc).map(|(&a, &c)| a - vc * c).collect()
            } else if is_actor {
                ga.to_vec()
            } else {
                gc.iter().map(|&c| -c).collect()
            }
        };
        let mut wbar = raw(trace.weight);
        wbar.extend(raw(trace.bias));
        let ls = &mut state.layers[trace.layer];
        let nat = kfac_step(&wbar, ls, damping, cfg.kfac_refresh)?;
        ls.staleness += 1;
        let q = ls.quadratic_form(&nat);
        if is_actor || shared {
            quad_actor += q;
        } else {
            quad_critic += q;
        }
        let (inp, out) = (ls.dim_a - 1, ls.dim_g);
        let (dw, db) = split_bias(&nat, inp, out);
        direction.insert(trace.weight, dw);
        direction.insert(trace.bias, db);
    }
    let two = T::lit(2.0);
    let g_ls = grad_of(&all, &g_actor, vars.log_std).data();
    let d_ls: Vec<T> = g_ls.iter().map(|&g| g / (two + damping)).collect();
    quad_actor += d_ls.iter().map(|&d| two * d * d).sum::<T>();
    direction.insert(vars.log_std, d_ls);

    let radius = T::lit(cfg.kfac_delta);
    let eta_max = T::lit(cfg.kfac_eta_max);
    let eta_actor = rescale(quad_actor, radius, eta_max);
    let eta_critic = if shared { eta_actor } else { rescale(quad_critic, radius, eta_max) };
    let value_vars = vars.value_group();

    let before_obj = tape.value(actor_obj).item();
    let before_critic = tape.value(critic_loss).item();
    let mut params = net.flat();
    let mut offset = 0;
    for v in &all {
        let d = &direction[v];
        let eta = if !shared && value_vars.contains(v) { eta_critic } else { eta_actor };
        for (p, &dv) in params[offset..offset + d.len()].iter_mut().zip(d) {
            *p += eta * dv;
        }
        offset += d.len();
    }
    net.set_flat(&params)?;
    state.updates += 1;

    let kl = mean_kl(net, &batch)?;
    let after_obj = actor_objective(net, &batch, &adv)?;
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let ent = entropy_graph(&mut tape, vars.log_std);
    let condition = state.layers.iter().map(|l| l.condition).fold(T::zero(), |a, b| if b > a { b } else { a });
    Ok(UpdateReport {
        surrogate_before: Some(before_obj.as_f64()),
        surrogate_after: Some(after_obj.as_f64()),
        kl: Some(kl.as_f64()),
        value_loss_before: Some(before_critic.as_f64()),
        value_loss_after: Some(critic_gauss_newton_loss(net, &batch.observations, &returns)?.as_f64()),
        eta: Some(eta_actor.as_f64()),
        factor_condition: Some(condition.as_f64()),
        entropy: Some(tape.value(ent).item().as_f64()),
        ..Default::default()
    })
}

fn rescale<T: Scalar>(quad: T, radius: T, eta_max: T) -> T {
    trust_region_rescale(&[T::one()], quad, radius, eta_max).1
}
