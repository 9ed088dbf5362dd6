//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// `θ ← θ + α·∇J`: one plain gradient-ascent step on the return objective.
pub fn gradient_ascent_step<T: Scalar>(theta: &mut [T], grad: &[T], alpha: T) {
    assert_eq!(theta.len(), grad.len(), "parameter and gradient lengths differ");
    for (p, &g) in theta.iter_mut().zip(grad) {
        *p += alpha * g;
    }
}

/// Discounted return `Σ_k γ^k r_k` of one reward sequence.
pub fn discounted_return<T: Scalar>(rewards: &[T], gamma: T) -> T {
    rewards.iter().rev().fold(T::zero(), |acc, &r| r + gamma * acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(format!("unknown optimizer `{s}` (sgd|adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// Stateful optimizer; Adam keeps first and second moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: T, n: usize) -> Self {
        Self {
            kind,
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Moves `params` against `grad`.
    pub fn descend(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), grad.len(), "parameter and gradient lengths differ");
        assert_eq!(params.len(), self.m.len(), "optimizer sized for a different parameter count");
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => gradient_ascent_step(params, grad, -self.lr),
            OptimizerKind::Adam => {
                let one = T::one();
                let t = self.t as i32;
                let bc1 = one - self.beta1.powi(t);
                let bc2 = one - self.beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
    }

    /// Moves `params` along `grad`.
    pub fn ascend(&mut self, params: &mut [T], grad: &[T]) {
        let neg: Vec<T> = grad.iter().map(|&g| -g).collect();
        self.descend(params, &neg);
    }
}
