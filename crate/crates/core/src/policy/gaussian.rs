use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{Tape, Var};
use crate::Scalar;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian with diagonal covariance `exp(2·log_std)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian<T> {
    mean: Vec<T>,
    log_std: Vec<T>,
}

impl<T: Scalar> DiagonalGaussian<T> {
    /// `log_std` is clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn new(mean: Vec<T>, log_std: Vec<T>) -> Self {
        assert_eq!(mean.len(), log_std.len(), "mean and log_std widths differ");
        let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        let log_std = log_std.into_iter().map(|s| s.max(lo).min(hi)).collect();
        Self { mean, log_std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn log_std(&self) -> &[T] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<T> {
        self.log_std.iter().map(|s| s.exp()).collect()
    }

    /// `mean + exp(log_std) ⊙ z` with `z` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &s)| m + s.exp() * T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    pub fn log_prob(&self, action: &[T]) -> T {
        assert_eq!(action.len(), self.dim(), "action width");
        let half = T::lit(0.5);
        let mut lp = -half * T::from_usize_lossy(self.dim()) * T::lit(LN_2PI);
        for ((&a, &m), &s) in action.iter().zip(&self.mean).zip(&self.log_std) {
            let z = (a - m) / s.exp();
            lp -= half * z * z + s;
        }
        lp
    }

    /// `KL(self ‖ other)`.
    pub fn kl(&self, other: &Self) -> T {
        assert_eq!(self.dim(), other.dim(), "KL between different widths");
        let half = T::lit(0.5);
        let mut kl = T::zero();
        for i in 0..self.dim() {
            let (m0, s0) = (self.mean[i], self.log_std[i]);
            let (m1, s1) = (other.mean[i], other.log_std[i]);
            let v0 = (s0 + s0).exp();
            let v1 = (s1 + s1).exp();
            let dm = m0 - m1;
            kl += s1 - s0 + (v0 + dm * dm) / (v1 + v1) - half;
        }
        kl.max(T::zero())
    }

    pub fn entropy(&self) -> T {
        let half = T::lit(0.5);
        half * T::from_usize_lossy(self.dim()) * (T::lit(LN_2PI) + T::one()) + self.log_std.iter().copied().sum()
    }
}

/// Per-row log density of `actions: [B, M]` under `N(mean, exp(log_std)²)`,
/// with `mean: [B, M]` and state-independent `log_std: [M]`. Returns `[B]`.
pub fn log_prob_graph<T: Scalar>(tape: &mut Tape<T>, mean: Var, log_std: Var, actions: Var) -> Var {
    let (b, m) = (tape.value(mean).rows(), tape.value(mean).cols());
    let ls_rows = tape.broadcast_rows(log_std, b);
    let std = tape.exp(ls_rows);
    let diff = tape.sub(actions, mean);
    let z = tape.div(diff, std);
    let z2 = tape.square(z);
    let quad = tape.sum_cols(z2);
    let half_quad = tape.scale(quad, T::lit(-0.5));
    let ls_sum = tape.sum(log_std);
    let ls_col = tape.expand(ls_sum, &[b]);
    let lp = tape.sub(half_quad, ls_col);
    tape.add_scalar(lp, T::lit(-0.5 * m as f64 * LN_2PI))
}

/// Per-row `KL(old ‖ new)`; `old_mean`, `old_log_std` are `[B, M]`
/// constants, `new_log_std` is `[M]`. Returns `[B]`.
pub fn kl_graph<T: Scalar>(tape: &mut Tape<T>, old_mean: Var, old_log_std: Var, new_mean: Var, new_log_std: Var) -> Var {
    let b = tape.value(new_mean).rows();
    let new_ls = tape.broadcast_rows(new_log_std, b);
    let two_old = tape.scale(old_log_std, T::lit(2.0));
    let old_var = tape.exp(two_old);
    let two_new = tape.scale(new_ls, T::lit(2.0));
    let new_var = tape.exp(two_new);
    let dm = tape.sub(old_mean, new_mean);
    let dm2 = tape.square(dm);
    let num = tape.add(old_var, dm2);
    let den = tape.scale(new_var, T::lit(2.0));
    let frac = tape.div(num, den);
    let dls = tape.sub(new_ls, old_log_std);
    let per_dim = tape.add(dls, frac);
    let per_dim = tape.add_scalar(per_dim, T::lit(-0.5));
    tape.sum_cols(per_dim)
}

/// Entropy of the state-independent Gaussian with `log_std: [M]`, rank 0.
pub fn entropy_graph<T: Scalar>(tape: &mut Tape<T>, log_std: Var) -> Var {
    let m = tape.value(log_std).len();
    let s = tape.sum(log_std);
    tape.add_scalar(s, T::lit(0.5 * m as f64 * (LN_2PI + 1.0)))
}
