//! Policy-gradient reinforcement learning on kinematic robot-arm reachers.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: dense tensors with a reverse-mode tape, MLPs, and
//!   Hessian-vector products through double backward.
//! - [`policy`]: diagonal Gaussian policies and value heads, disjoint or with a
//!   shared trunk.
//! - [`rollout`]: trajectory collection, rewards-to-go, GAE, and the training
//!   configuration.
//! - [`trpo`], [`ppo`], [`acktr`]: the three on-policy update rules.
//! - [`envs`]: 2-DoF and 6-DoF reacher environments with four reward variants.
//! - [`envlink`]: a framed TCP protocol serving any environment out of process.
//! - [`harness`]: the train/eval loop, run logs, checkpoints and curve export.
//!
//! Every numeric module is generic over [`Scalar`]; the aliases below fix the
//! common `f64` instantiation used by the harness and the CLI.

pub mod acktr;
pub mod diffcore;
pub mod envlink;
pub mod envs;
pub mod harness;
pub mod optim;
pub mod policy;
pub mod ppo;
pub mod report;
pub mod rollout;
pub mod scalar;
pub mod trpo;

pub use scalar::Scalar;

pub type Tensor64 = diffcore::Tensor<f64>;
pub type Tape64 = diffcore::Tape<f64>;
pub type Mlp64 = diffcore::Mlp<f64>;
pub type DiagonalGaussian64 = policy::DiagonalGaussian<f64>;
pub type PolicyValueNet64 = policy::PolicyValueNet<f64>;
pub type TrajectoryBatch64 = rollout::TrajectoryBatch<f64>;

pub type Tensor32 = diffcore::Tensor<f32>;
pub type Tape32 = diffcore::Tape<f32>;
pub type PolicyValueNet32 = policy::PolicyValueNet<f32>;
