//! Kinematic arm reachers.
//!
//! Observations are `[joints (M), end-effector position (3), quaternion (4)]`,
//! actions are joint-angle deltas. All environments start from zero joints and
//! aim for a fixed target pose.

mod kinematics;
mod reacher;

pub use kinematics::{segment_distance, ArmModel, Joint, Pose};
pub use reacher::{
    normalized, reward, Reacher, ReacherOptions, ReacherState, ACTION_LIMIT, COLLISION_PENALTY,
    DEFAULT_MAX_EPISODE_STEPS, ORIENTATION_COEF, PLANAR_TARGET, TARGET_ORIENTATION, TARGET_POSITION,
};

use serde::{Deserialize, Serialize};

pub const ENV_NAMES: [&str; 5] =
    ["Reach2D-v0", "Reach6D-v0", "ReachOrient6D-v0", "ReachCollision6D-v0", "ReachCollisionOrient6D-v0"];

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("action contains a non-finite value")]
    NonFiniteAction,
    #[error("action has width {got}, environment expects {expected}")]
    ActionWidth { expected: usize, got: usize },
    #[error("step called before reset")]
    NotReset,
    #[error("remote environment error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Reach,
    ReachOrient,
    ReachCollision,
    ReachCollisionOrient,
}

impl Variant {
    pub fn uses_orientation(self) -> bool {
        matches!(self, Self::ReachOrient | Self::ReachCollisionOrient)
    }

    pub fn uses_collision(self) -> bool {
        matches!(self, Self::ReachCollision | Self::ReachCollisionOrient)
    }

    /// Wire id.
    pub fn id(self) -> u8 {
        match self {
            Self::Reach => 0,
            Self::ReachOrient => 1,
            Self::ReachCollision => 2,
            Self::ReachCollisionOrient => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Some(match id {
            0 => Self::Reach,
            1 => Self::ReachOrient,
            2 => Self::ReachCollision,
            3 => Self::ReachCollisionOrient,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub max_episode_steps: usize,
    pub variant: Variant,
    pub target: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Reset/step interface shared by local and remote environments.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    fn seed(&mut self, seed: u64) -> Result<(), EnvError>;
    fn reset(&mut self) -> Result<Vec<f64>, EnvError>;
    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError>;

    /// Internal state for checkpointing; `None` when the state lives elsewhere.
    fn snapshot(&self) -> Option<ReacherState> {
        None
    }

    fn restore(&mut self, _state: &ReacherState) -> Result<(), EnvError> {
        Err(EnvError::Config("environment does not support restore".into()))
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }
    fn seed(&mut self, seed: u64) -> Result<(), EnvError> {
        (**self).seed(seed)
    }
    fn reset(&mut self) -> Result<Vec<f64>, EnvError> {
        (**self).reset()
    }
    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        (**self).step(action)
    }
    fn snapshot(&self) -> Option<ReacherState> {
        (**self).snapshot()
    }
    fn restore(&mut self, state: &ReacherState) -> Result<(), EnvError> {
        (**self).restore(state)
    }
}

pub fn default_target() -> Pose {
    Pose::new(TARGET_POSITION, normalized(TARGET_ORIENTATION))
}

/// Builds a registered environment. `arm` replaces the default geometry.
pub fn make_reacher(name: &str, options: &ReacherOptions, arm: Option<ArmModel>) -> Result<Reacher, EnvError> {
    let (default_arm, variant, target) = match name {
        "Reach2D-v0" => (ArmModel::planar_two_link(), Variant::Reach, Pose::identity_at(PLANAR_TARGET)),
        "Reach6D-v0" => (ArmModel::six_dof(), Variant::Reach, default_target()),
        "ReachOrient6D-v0" => (ArmModel::six_dof(), Variant::ReachOrient, default_target()),
        "ReachCollision6D-v0" => (ArmModel::six_dof(), Variant::ReachCollision, default_target()),
        "ReachCollisionOrient6D-v0" => (ArmModel::six_dof(), Variant::ReachCollisionOrient, default_target()),
        other => return Err(EnvError::UnknownEnv(other.to_string())),
    };
    if options.max_episode_steps == 0 {
        return Err(EnvError::Config("max_episode_steps must be positive".into()));
    }
    Ok(Reacher::new(name, arm.unwrap_or(default_arm), variant, target, options))
}

pub fn make_env(name: &str, options: &ReacherOptions) -> Result<Box<dyn Environment>, EnvError> {
    Ok(Box::new(make_reacher(name, options, None)?))
}
