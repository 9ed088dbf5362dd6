//! Proximal policy optimization with the clipped surrogate.
//!
//! `L^clip` is maximized; the optimizers descend on `−L^clip`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{flatten_params, Tape, Tensor, Var};
use crate::optim::Optimizer;
use crate::policy::{entropy_graph, PolicyValueNet, Sharing};
use crate::report::{UpdateError, UpdateReport};
use crate::rollout::{TrainConfig, TrajectoryBatch};
use crate::trpo::{mean_kl, ratio_graph, value_loss, value_loss_graph};
use crate::Scalar;

/// `r_t = exp(logπ_θ(a_t|s_t) − logπ_old(a_t|s_t))` for every row.
pub fn probability_ratio<T: Scalar>(net: &PolicyValueNet<T>, batch: &TrajectoryBatch<T>) -> Result<Vec<T>, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let r = ratio_graph(&mut tape, &vars, batch)?;
    Ok(tape.value(r).data().to_vec())
}

fn check_eps<T: Scalar>(eps: T) -> Result<(), UpdateError> {
    if !(eps > T::zero()) {
        return Err(UpdateError::Config(format!("clip epsilon must be positive, got {eps}")));
    }
    Ok(())
}

/// Per-sample `min(r·Â, clip(r, 1−ε, 1+ε)·Â)`.
pub fn clipped_terms<T: Scalar>(r: &[T], adv: &[T], eps: T) -> Result<Vec<T>, UpdateError> {
    check_eps(eps)?;
    assert_eq!(r.len(), adv.len(), "ratio and advantage lengths differ");
    let (lo, hi) = (T::one() - eps, T::one() + eps);
    Ok(r.iter().zip(adv).map(|(&r, &a)| (r * a).min(r.max(lo).min(hi) * a)).collect())
}

/// Mean of [`clipped_terms`].
pub fn clipped_loss<T: Scalar>(r: &[T], adv: &[T], eps: T) -> Result<T, UpdateError> {
    let terms = clipped_terms(r, adv, eps)?;
    let n = T::from_usize_lossy(terms.len());
    Ok(terms.iter().copied().sum::<T>() / n)
}

/// Records `L^clip` from a ratio node `[B]`.
pub fn clipped_graph<T: Scalar>(tape: &mut Tape<T>, ratio: Var, adv: &[T], eps: T) -> Result<Var, UpdateError> {
    check_eps(eps)?;
    let a = tape.constant(Tensor::vector(adv.to_vec()));
    let unclipped = tape.mul(ratio, a);
    let c = tape.clamp(ratio, T::one() - eps, T::one() + eps);
    let clipped = tape.mul(c, a);
    let m = tape.minimum(unclipped, clipped);
    Ok(tape.mean(m))
}

/// `L^clip` of `net` on the batch.
pub fn clip_objective<T: Scalar>(net: &PolicyValueNet<T>, batch: &TrajectoryBatch<T>, eps: T) -> Result<T, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let r = ratio_graph(&mut tape, &vars, batch)?;
    let l = clipped_graph(&mut tape, r, &batch.advantages, eps)?;
    Ok(tape.value(l).item())
}

/// Gradient of [`clip_objective`] in [`PolicyValueNet::policy_flat`] order.
pub fn clip_gradient<T: Scalar>(net: &PolicyValueNet<T>, batch: &TrajectoryBatch<T>, eps: T) -> Result<Vec<T>, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let r = ratio_graph(&mut tape, &vars, batch)?;
    let l = clipped_graph(&mut tape, r, &batch.advantages, eps)?;
    Ok(flat(&tape.backward_wrt(l, &vars.policy_group())?))
}

/// Fraction of rows with `|r − 1| > ε`.
pub fn clip_fraction<T: Scalar>(r: &[T], eps: T) -> T {
    let n = r.iter().filter(|&&x| (x - T::one()).abs() > eps).count();
    T::from_usize_lossy(n) / T::from_usize_lossy(r.len().max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoState<T> {
    /// Policy group for disjoint networks, every parameter for a shared trunk.
    pub policy_optimizer: Optimizer<T>,
    /// Value group; unused with a shared trunk.
    pub value_optimizer: Optimizer<T>,
}

impl<T: Scalar> PpoState<T> {
    pub fn new(net: &PolicyValueNet<T>, cfg: &TrainConfig) -> Self {
        let (np, nv) = match net.sharing() {
            Sharing::Disjoint => (net.policy_param_count(), net.param_count() - net.policy_param_count()),
            Sharing::SharedTrunk => (net.param_count(), 0),
        };
        Self {
            policy_optimizer: Optimizer::new(cfg.optimizer, T::lit(cfg.lr), np),
            value_optimizer: Optimizer::new(cfg.optimizer, T::lit(cfg.vf_lr), nv),
        }
    }
}

fn flat<T: Scalar>(ts: &[Tensor<T>]) -> Vec<T> {
    let refs: Vec<&Tensor<T>> = ts.iter().collect();
    flatten_params(&refs)
}

fn minibatch_step<T: Scalar>(
    net: &mut PolicyValueNet<T>,
    sub: &TrajectoryBatch<T>,
    cfg: &TrainConfig,
    state: &mut PpoState<T>,
) -> Result<(), UpdateError> {
    let eps = T::lit(cfg.clip_eps);
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let r = ratio_graph(&mut tape, &vars, sub)?;
    let lclip = clipped_graph(&mut tape, r, &sub.advantages, eps)?;
    let vl = value_loss_graph(&mut tape, &vars, sub)?;
    match net.sharing() {
        Sharing::Disjoint => {
            let neg = tape.neg(lclip);
            let gp = flat(&tape.backward_wrt(neg, &vars.policy_group())?);
            let gv = flat(&tape.backward_wrt(vl, &vars.value_group())?);
            let mut theta = net.policy_flat();
            state.policy_optimizer.descend(&mut theta, &gp);
            net.set_policy_flat(&theta)?;
            let mut phi = net.value_flat();
            state.value_optimizer.descend(&mut phi, &gv);
            net.set_value_flat(&phi)?;
        }
        Sharing::SharedTrunk => {
            let scaled_v = tape.scale(vl, T::lit(cfg.value_coef));
            let total = tape.sub(scaled_v, lclip);
            let g = flat(&tape.backward_wrt(total, &vars.all())?);
            let mut all = net.flat();
            state.policy_optimizer.descend(&mut all, &g);
            net.set_flat(&all)?;
        }
    }
    Ok(())
}

/// Several epochs of shuffled minibatch ascent on `L^clip` with value regression.
pub fn ppo_update<T: Scalar, R: Rng + ?Sized>(
    net: &mut PolicyValueNet<T>,
    batch: &TrajectoryBatch<T>,
    cfg: &TrainConfig,
    state: &mut PpoState<T>,
    rng: &mut R,
) -> Result<UpdateReport, UpdateError> {
    let eps = T::lit(cfg.clip_eps);
    check_eps(eps)?;
    if !batch.is_estimated() || batch.is_empty() {
        return Err(UpdateError::Config("ppo needs a batch with estimated advantages".into()));
    }
    let mut batch = batch.clone();
    batch.refresh_old_policy(net)?;
    let before = clip_objective(net, &batch, eps)?;
    let vl_before = value_loss(net, &batch)?;

    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mb = cfg.minibatch.clamp(1, batch.len());
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            let sub = batch.select(chunk);
            minibatch_step(net, &sub, cfg, state)?;
        }
        if cfg.target_kl > 0.0 && mean_kl(net, &batch)?.as_f64() > cfg.target_kl {
            break;
        }
    }

    let r = probability_ratio(net, &batch)?;
    let after = clipped_loss(&r, &batch.advantages, eps)?;
    let n = T::from_usize_lossy(r.len());
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let ent = entropy_graph(&mut tape, vars.log_std);
    Ok(UpdateReport {
        surrogate_before: Some(before.as_f64()),
        surrogate_after: Some(after.as_f64()),
        kl: Some(mean_kl(net, &batch)?.as_f64()),
        value_loss_before: Some(vl_before.as_f64()),
        value_loss_after: Some(value_loss(net, &batch)?.as_f64()),
        clip_fraction: Some(clip_fraction(&r, eps).as_f64()),
        mean_ratio: Some((r.iter().copied().sum::<T>() / n).as_f64()),
        max_ratio: Some(r.iter().copied().fold(T::neg_infinity(), T::max).as_f64()),
        entropy: Some(tape.value(ent).item().as_f64()),
        ..Default::default()
    })
}
