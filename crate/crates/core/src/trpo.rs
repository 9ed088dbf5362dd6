//! Trust-region policy optimization: conjugate-gradient natural step on the
//! damped KL Hessian, backtracking line search, and value regression.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::linalg::{axpy, dot, norm};
use crate::diffcore::{flatten_params, AdError, Tape, Tensor, Var};
use crate::optim::Optimizer;
use crate::policy::{entropy_graph, kl_graph, log_prob_graph, NetVars, PolicyValueNet, Sharing};
use crate::report::{UpdateError, UpdateReport};
use crate::rollout::{TrainConfig, TrajectoryBatch};
use crate::Scalar;

/// Records `mean(exp(logπ_θ − logπ_old)·Â)` for the batch.
pub fn surrogate_graph<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &NetVars,
    batch: &TrajectoryBatch<T>,
) -> Result<Var, UpdateError> {
    let ratio = ratio_graph(tape, vars, batch)?;
    let adv = tape.constant(Tensor::vector(batch.advantages.clone()));
    let weighted = tape.mul(ratio, adv);
    Ok(tape.mean(weighted))
}

/// Per-row probability ratio `[B]`.
pub fn ratio_graph<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &NetVars,
    batch: &TrajectoryBatch<T>,
) -> Result<Var, UpdateError> {
    check_estimated(batch)?;
    let obs = tape.constant(batch.observations.clone());
    let acts = tape.constant(batch.actions.clone());
    let old = tape.constant(Tensor::vector(batch.old_log_probs.clone()));
    let p = vars.policy_dist(tape, obs, batch.obs_dim())?;
    let lp = log_prob_graph(tape, p.mean, p.log_std, acts);
    let d = tape.sub(lp, old);
    Ok(tape.exp(d))
}

fn check_estimated<T: Scalar>(batch: &TrajectoryBatch<T>) -> Result<(), UpdateError> {
    if batch.is_empty() || !batch.is_estimated() || batch.old_log_probs.len() != batch.len() {
        return Err(UpdateError::Config("batch needs old log-probs and estimated advantages".into()));
    }
    Ok(())
}

/// Sampled surrogate advantage `L_θ(θ_k)`.
pub fn surrogate_loss<T: Scalar>(net: &PolicyValueNet<T>, batch: &TrajectoryBatch<T>) -> Result<T, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let l = surrogate_graph(&mut tape, &vars, batch)?;
    Ok(tape.value(l).item())
}

/// Gradient of the surrogate with respect to the policy group, in
/// [`PolicyValueNet::policy_flat`] order.
pub fn policy_gradient_estimate<T: Scalar>(
    net: &PolicyValueNet<T>,
    batch: &TrajectoryBatch<T>,
) -> Result<Vec<T>, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let l = surrogate_graph(&mut tape, &vars, batch)?;
    let grads = tape.backward_wrt(l, &vars.policy_group())?;
    Ok(flat(&grads))
}

fn flat<T: Scalar>(ts: &[Tensor<T>]) -> Vec<T> {
    let refs: Vec<&Tensor<T>> = ts.iter().collect();
    flatten_params(&refs)
}

/// Mean `KL(π_old ‖ π_θ)` over the batch states, where `π_old` is read from
/// the batch.
pub fn mean_kl<T: Scalar>(net: &PolicyValueNet<T>, batch: &TrajectoryBatch<T>) -> Result<T, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let obs = tape.constant(batch.observations.clone());
    let om = tape.constant(batch.old_means.clone());
    let ol = tape.constant(batch.old_log_stds.clone());
    let p = vars.policy_dist(&mut tape, obs, batch.obs_dim())?;
    let kl = kl_graph(&mut tape, om, ol, p.mean, p.log_std);
    let m = tape.mean(kl);
    Ok(tape.value(m).item())
}

/// `v ↦ (H + c·I)·v` for the Hessian `H` of the mean KL between the policy at
/// its current parameters and a perturbed copy, evaluated at zero
/// perturbation. The gradient graph is recorded once and reused.
pub struct KlCurvature<T: Scalar> {
    tape: Tape<T>,
    params: Vec<Var>,
    grads: Vec<Var>,
    shapes: Vec<Vec<usize>>,
    damping: T,
    base_len: usize,
}

impl<T: Scalar> KlCurvature<T> {
    pub fn new(net: &PolicyValueNet<T>, observations: &Tensor<T>, damping: T) -> Result<Self, UpdateError> {
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let obs = tape.constant(observations.clone());
        let p = vars.policy_dist(&mut tape, obs, net.obs_dim())?;
        let b = observations.rows();
        let om = tape.constant(tape.value(p.mean).clone());
        let ls_rows = tape.broadcast_rows(p.log_std, b);
        let ol = tape.constant(tape.value(ls_rows).clone());
        let kl = kl_graph(&mut tape, om, ol, p.mean, p.log_std);
        let m = tape.mean(kl);
        let params = vars.policy_group();
        let grads = tape.grad_graph(m, &params)?;
        let shapes = params.iter().map(|&v| tape.value(v).shape().to_vec()).collect();
        let base_len = tape.len();
        Ok(Self { tape, params, grads, shapes, damping, base_len })
    }

    pub fn dim(&self) -> usize {
        self.shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// `H·v` without damping.
    pub fn hvp(&mut self, v: &[T]) -> Result<Vec<T>, UpdateError> {
        if v.len() != self.dim() {
            return Err(AdError::Contract(format!("hvp: vector of length {} for {} parameters", v.len(), self.dim())).into());
        }
        self.tape.truncate(self.base_len);
        let mut offset = 0;
        let mut total: Option<Var> = None;
        for (k, shape) in self.shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let piece = Tensor::new(shape.clone(), v[offset..offset + n].to_vec())?;
            offset += n;
            let c = self.tape.constant(piece);
            let d = self.tape.dot(self.grads[k], c);
            total = Some(match total {
                Some(t) => self.tape.add(t, d),
                None => d,
            });
        }
        let total = total.ok_or_else(|| AdError::Contract("no policy parameters".into()))?;
        let hv = self.tape.backward_wrt(total, &self.params)?;
        Ok(flat(&hv))
    }

    /// `(H + c·I)·v`.
    pub fn apply(&mut self, v: &[T]) -> Result<Vec<T>, UpdateError> {
        let mut out = self.hvp(v)?;
        axpy(self.damping, v, &mut out);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution<T> {
    pub x: Vec<T>,
    /// `‖g − A·x‖ / ‖g‖` from the recursive residual; 0 when `g = 0`.
    pub residual: T,
    pub iterations: usize,
}

/// Solves `A·x = g` for symmetric positive definite `A` given as a product.
pub fn conjugate_gradient<T, F>(mut avp: F, g: &[T], iters: usize, tol: T) -> Result<CgSolution<T>, UpdateError>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<Vec<T>, UpdateError>,
{
    let n = g.len();
    let mut x = vec![T::zero(); n];
    let gnorm = norm(g);
    if gnorm == T::zero() {
        return Ok(CgSolution { x, residual: T::zero(), iterations: 0 });
    }
    if !gnorm.is_finite() {
        return Err(UpdateError::NonFinite("conjugate gradient right-hand side".into()));
    }
    let mut r = g.to_vec();
    let mut p = g.to_vec();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    for i in 0..iters {
        let ap = avp(&p)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= T::zero() {
            return Err(UpdateError::NonFinite(format!("conjugate gradient iteration {i}: pᵀAp = {pap}")));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        iterations = i + 1;
        if !rr_new.is_finite() {
            return Err(UpdateError::NonFinite(format!("conjugate gradient iteration {i}: residual")));
        }
        if rr_new.sqrt() <= tol * gnorm {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Ok(CgSolution { x, residual: rr.sqrt() / gnorm, iterations })
}

/// Objective and constraint evaluated at candidate parameters.
pub trait TrustRegionProblem<T> {
    /// `(surrogate, mean KL from the old policy)` at `theta`.
    fn evaluate(&mut self, theta: &[T]) -> Result<(T, T), UpdateError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearch<T> {
    pub theta: Vec<T>,
    pub accepted: bool,
    /// Shrink count `j` of the accepted step, or the number tried on rejection.
    pub backtracks: usize,
    /// Full-step multiplier `sqrt(2δ / x̂ᵀĤx̂)`.
    pub beta: T,
    pub surrogate_before: T,
    pub surrogate_after: T,
    pub kl: T,
}

/// Tries `θ_old + α^j·β·x̂` for `j = 0..=max_backtracks` and keeps the first
/// candidate that raises the surrogate while keeping KL within `delta`.
/// On failure `θ_old` is returned unchanged.
pub fn backtracking_line_search<T: Scalar, P: TrustRegionProblem<T>>(
    problem: &mut P,
    theta_old: &[T],
    x: &[T],
    xhx: T,
    delta: T,
    alpha: T,
    max_backtracks: usize,
) -> Result<LineSearch<T>, UpdateError> {
    let (before, _) = problem.evaluate(theta_old)?;
    let mut out = LineSearch {
        theta: theta_old.to_vec(),
        accepted: false,
        backtracks: 0,
        beta: T::zero(),
        surrogate_before: before,
        surrogate_after: before,
        kl: T::zero(),
    };
    if x.iter().all(|&v| v == T::zero()) || !(xhx > T::zero()) {
        return Ok(out);
    }
    let beta = (T::lit(2.0) * delta / xhx).sqrt();
    out.beta = beta;
    let mut shrink = T::one();
    for j in 0..=max_backtracks {
        let step = beta * shrink;
        let candidate: Vec<T> = theta_old.iter().zip(x).map(|(&t, &d)| t + step * d).collect();
        let (l, kl) = problem.evaluate(&candidate)?;
        out.backtracks = j + 1;
        if l.is_finite() && kl.is_finite() && l > before && kl <= delta {
            out.theta = candidate;
            out.accepted = true;
            out.backtracks = j;
            out.surrogate_after = l;
            out.kl = kl;
            return Ok(out);
        }
        shrink *= alpha;
    }
    Ok(out)
}

struct PolicyProblem<'a, T> {
    net: PolicyValueNet<T>,
    batch: &'a TrajectoryBatch<T>,
}

impl<T: Scalar> TrustRegionProblem<T> for PolicyProblem<'_, T> {
    fn evaluate(&mut self, theta: &[T]) -> Result<(T, T), UpdateError> {
        self.net.set_policy_flat(theta)?;
        let mut tape = Tape::new();
        let vars = self.net.bind(&mut tape);
        let l = surrogate_graph(&mut tape, &vars, self.batch)?;
        let obs = tape.constant(self.batch.observations.clone());
        let om = tape.constant(self.batch.old_means.clone());
        let ol = tape.constant(self.batch.old_log_stds.clone());
        let p = vars.policy_dist(&mut tape, obs, self.batch.obs_dim())?;
        let kl = kl_graph(&mut tape, om, ol, p.mean, p.log_std);
        let m = tape.mean(kl);
        Ok((tape.value(l).item(), tape.value(m).item()))
    }
}

/// Mean squared error of `V(s_t)` against `batch.returns`.
pub fn value_loss<T: Scalar>(net: &PolicyValueNet<T>, batch: &TrajectoryBatch<T>) -> Result<T, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let l = value_loss_graph(&mut tape, &vars, batch)?;
    Ok(tape.value(l).item())
}

pub fn value_loss_graph<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &NetVars,
    batch: &TrajectoryBatch<T>,
) -> Result<Var, UpdateError> {
    if batch.returns.len() != batch.len() {
        return Err(UpdateError::Config("batch has no returns".into()));
    }
    let obs = tape.constant(batch.observations.clone());
    let ret = tape.constant(Tensor::vector(batch.returns.clone()));
    let v = vars.value(tape, obs, batch.obs_dim())?;
    let d = tape.sub(v.value, ret);
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Gradient of [`value_loss`] in [`PolicyValueNet::value_flat`] order.
pub fn value_gradient<T: Scalar>(net: &PolicyValueNet<T>, batch: &TrajectoryBatch<T>) -> Result<Vec<T>, UpdateError> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let l = value_loss_graph(&mut tape, &vars, batch)?;
    Ok(flat(&tape.backward_wrt(l, &vars.value_group())?))
}

/// Minibatch regression of the value head onto `batch.returns`.
/// Returns the full-batch loss before and after.
pub fn fit_value_function<T: Scalar, R: Rng + ?Sized>(
    net: &mut PolicyValueNet<T>,
    batch: &TrajectoryBatch<T>,
    epochs: usize,
    minibatch: usize,
    optimizer: &mut Optimizer<T>,
    rng: &mut R,
) -> Result<(T, T), UpdateError> {
    let before = value_loss(net, batch)?;
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mb = minibatch.clamp(1, batch.len().max(1));
    for _ in 0..epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            let sub = batch.select(chunk);
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let l = value_loss_graph(&mut tape, &vars, &sub)?;
            let g = flat(&tape.backward_wrt(l, &vars.value_group())?);
            let mut phi = net.value_flat();
            optimizer.descend(&mut phi, &g);
            net.set_value_flat(&phi)?;
        }
    }
    let after = value_loss(net, batch)?;
    Ok((before, after))
}

/// Optimizer state carried between TRPO updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrpoState<T> {
    pub value_optimizer: Optimizer<T>,
}

impl<T: Scalar> TrpoState<T> {
    pub fn new(net: &PolicyValueNet<T>, cfg: &TrainConfig) -> Self {
        let n = net.param_count() - net.policy_param_count();
        Self { value_optimizer: Optimizer::new(cfg.optimizer, T::lit(cfg.vf_lr), n) }
    }
}

/// One TRPO iteration on a collected, estimated batch.
pub fn trpo_update<T: Scalar, R: Rng + ?Sized>(
    net: &mut PolicyValueNet<T>,
    batch: &TrajectoryBatch<T>,
    cfg: &TrainConfig,
    state: &mut TrpoState<T>,
    rng: &mut R,
) -> Result<UpdateReport, UpdateError> {
    if net.sharing() != Sharing::Disjoint {
        return Err(UpdateError::Config("trpo needs disjoint policy and value networks".into()));
    }
    check_estimated(batch)?;
    let mut batch = batch.clone();
    batch.refresh_old_policy(net)?;

    let g = policy_gradient_estimate(net, &batch)?;
    let mut curvature = KlCurvature::new(net, &batch.observations, T::lit(cfg.cg_damping))?;
    let cg = conjugate_gradient(|v| curvature.apply(v), &g, cfg.cg_iters, T::lit(cfg.cg_tol))?;
    let xhx = if cg.x.iter().all(|&v| v == T::zero()) { T::zero() } else { dot(&cg.x, &curvature.apply(&cg.x)?) };

    let theta_old = net.policy_flat();
    let mut problem = PolicyProblem { net: net.clone(), batch: &batch };
    let ls = backtracking_line_search(
        &mut problem,
        &theta_old,
        &cg.x,
        xhx,
        T::lit(cfg.delta),
        T::lit(cfg.backtrack_coef),
        cfg.max_backtracks,
    )?;
    net.set_policy_flat(&ls.theta)?;

    let (vl_before, vl_after) =
        fit_value_function(net, &batch, cfg.vf_epochs, cfg.vf_minibatch, &mut state.value_optimizer, rng)?;

    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let ent = entropy_graph(&mut tape, vars.log_std);
    Ok(UpdateReport {
        surrogate_before: Some(ls.surrogate_before.as_f64()),
        surrogate_after: Some(ls.surrogate_after.as_f64()),
        kl: Some(ls.kl.as_f64()),
        cg_residual: Some(cg.residual.as_f64()),
        backtracks: Some(ls.backtracks),
        accepted: Some(ls.accepted),
        value_loss_before: Some(vl_before.as_f64()),
        value_loss_after: Some(vl_after.as_f64()),
        entropy: Some(tape.value(ent).item().as_f64()),
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::linalg::matmul;

    #[test]
    fn cg_identity_one_iteration() {
        let g = vec![1.0, -2.0, 0.5];
        let s = conjugate_gradient(|v: &[f64]| Ok(v.to_vec()), &g, 10, 1e-10).unwrap();
        assert_eq!(s.x, g);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn cg_zero_rhs() {
        let s = conjugate_gradient(|v: &[f64]| Ok(v.to_vec()), &[0.0; 4], 10, 1e-10).unwrap();
        assert_eq!(s.x, vec![0.0; 4]);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn cg_reports_non_finite() {
        let r = conjugate_gradient(|v: &[f64]| Ok(v.iter().map(|_| f64::NAN).collect()), &[1.0], 5, 1e-10);
        assert!(matches!(r, Err(UpdateError::NonFinite(_))));
    }

    #[test]
    fn cg_small_spd() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let g = [1.0, 2.0];
        let s = conjugate_gradient(|v: &[f64]| Ok(matmul(&a, v, 2, 2, 1)), &g, 2, 1e-12).unwrap();
        assert!((s.x[0] - 1.0 / 11.0).abs() < 1e-14 && (s.x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    struct Quadratic {
        h: Vec<f64>,
        g: Vec<f64>,
    }

    impl TrustRegionProblem<f64> for Quadratic {
        fn evaluate(&mut self, theta: &[f64]) -> Result<(f64, f64), UpdateError> {
            let n = theta.len();
            let ht = matmul(&self.h, theta, n, n, 1);
            Ok((dot(&self.g, theta), 0.5 * dot(theta, &ht)))
        }
    }

    #[test]
    fn line_search_full_step_multiplier() {
        let mut q = Quadratic { h: vec![1.0], g: vec![1.0] };
        let ls = backtracking_line_search(&mut q, &[0.0], &[1.0], 0.02, 0.01, 0.8, 10).unwrap();
        assert_eq!(ls.beta, 1.0);
        assert!(ls.accepted);
    }

    #[test]
    fn line_search_zero_direction_keeps_theta() {
        let mut q = Quadratic { h: vec![1.0], g: vec![1.0] };
        let ls = backtracking_line_search(&mut q, &[0.3], &[0.0], 0.0, 0.01, 0.8, 10).unwrap();
        assert_eq!(ls.theta, vec![0.3]);
        assert!(!ls.accepted);
    }

    #[test]
    fn line_search_rejects_when_nothing_improves() {
        let mut q = Quadratic { h: vec![1.0], g: vec![-1.0] };
        let ls = backtracking_line_search(&mut q, &[0.0], &[1.0], 1.0, 0.01, 0.5, 3).unwrap();
        assert!(!ls.accepted);
        assert_eq!(ls.backtracks, 4);
        assert_eq!(ls.theta, vec![0.0]);
    }
}
