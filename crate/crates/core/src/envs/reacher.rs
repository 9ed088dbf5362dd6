use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kinematics::{ArmModel, Pose};
use super::{EnvError, EnvSpec, Environment, Transition, Variant};

/// Largest joint change per step, radians.
pub const ACTION_LIMIT: f64 = 0.1;
pub const ORIENTATION_COEF: f64 = 0.1;
pub const COLLISION_PENALTY: f64 = 1.0;
pub const DEFAULT_MAX_EPISODE_STEPS: usize = 512;

/// Target position for the 6-DoF arm, metres from the base.
pub const TARGET_POSITION: [f64; 3] = [-0.40028, 0.095615, 0.72466];
/// Target orientation `(w, x, y, z)`.
#[allow(clippy::approx_constant)]
pub const TARGET_ORIENTATION: [f64; 4] = [0.0, 0.707_106_8, 0.707_106_8, 0.0];
/// Target for the planar 2-link arm.
pub const PLANAR_TARGET: [f64; 3] = [1.2, 0.8, 0.0];

pub fn normalized(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Reward for one state; bounded above by 0.
pub fn reward(variant: Variant, pose: &Pose, target: &Pose, collision: bool) -> f64 {
    let mut r = -pose.distance_to(target);
    if variant.uses_orientation() {
        r -= ORIENTATION_COEF * (1.0 - pose.orientation_alignment(target).min(1.0));
    }
    if variant.uses_collision() && collision {
        r -= COLLISION_PENALTY;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReacherOptions {
    pub max_episode_steps: usize,
    pub randomize_target: bool,
    pub target: Option<Pose>,
}

impl Default for ReacherOptions {
    fn default() -> Self {
        Self { max_episode_steps: DEFAULT_MAX_EPISODE_STEPS, randomize_target: false, target: None }
    }
}

/// Mutable state of a [`Reacher`], enough to continue an episode exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReacherState {
    pub joints: Vec<f64>,
    pub steps: usize,
    pub target: Pose,
    pub started: bool,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

/// Kinematic reacher: actions are joint deltas clamped to ±[`ACTION_LIMIT`].
#[derive(Clone, Debug)]
pub struct Reacher {
    arm: ArmModel,
    spec: EnvSpec,
    randomize_target: bool,
    fixed_target: Pose,
    joints: Vec<f64>,
    steps: usize,
    started: bool,
    rng: ChaCha8Rng,
    clamp_events: u64,
}

impl Reacher {
    pub fn new(name: &str, arm: ArmModel, variant: Variant, target: Pose, options: &ReacherOptions) -> Self {
        let m = arm.dof();
        let target = options.target.unwrap_or(target);
        let spec = EnvSpec {
            name: name.to_string(),
            obs_dim: m + 7,
            act_dim: m,
            max_episode_steps: options.max_episode_steps,
            variant,
            target,
        };
        Self {
            joints: vec![0.0; m],
            arm,
            spec,
            randomize_target: options.randomize_target,
            fixed_target: target,
            steps: 0,
            started: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            clamp_events: 0,
        }
    }

    pub fn arm(&self) -> &ArmModel {
        &self.arm
    }

    pub fn joints(&self) -> &[f64] {
        &self.joints
    }

    pub fn pose(&self) -> Pose {
        self.arm.forward_kinematics(&self.joints)
    }

    pub fn distance_to_target(&self) -> f64 {
        self.pose().distance_to(&self.spec.target)
    }

    /// Number of times a joint hit its limit.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    pub fn observation(&self) -> Vec<f64> {
        let pose = self.pose();
        let mut obs = Vec::with_capacity(self.spec.obs_dim);
        obs.extend_from_slice(&self.joints);
        obs.extend_from_slice(&pose.position);
        obs.extend_from_slice(&pose.orientation);
        obs
    }

    pub fn state(&self) -> ReacherState {
        ReacherState {
            joints: self.joints.clone(),
            steps: self.steps,
            target: self.spec.target,
            started: self.started,
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn restore(&mut self, state: &ReacherState) -> Result<(), EnvError> {
        if state.joints.len() != self.arm.dof() {
            return Err(EnvError::Config("snapshot joint width does not match arm".into()));
        }
        self.joints = state.joints.clone();
        self.steps = state.steps;
        self.spec.target = state.target;
        self.started = state.started;
        self.rng = ChaCha8Rng::from_seed(state.rng_seed);
        self.rng.set_word_pos(state.rng_word_pos);
        Ok(())
    }

    fn sample_target(&mut self) -> Pose {
        let q: Vec<f64> = self
            .arm
            .joints
            .iter()
            .map(|j| self.rng.random_range(0.5 * j.limits.0..0.5 * j.limits.1))
            .collect();
        self.arm.forward_kinematics(&q)
    }
}

impl Environment for Reacher {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn seed(&mut self, seed: u64) -> Result<(), EnvError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(())
    }

    fn reset(&mut self) -> Result<Vec<f64>, EnvError> {
        self.joints = vec![0.0; self.arm.dof()];
        self.steps = 0;
        self.started = true;
        self.spec.target = if self.randomize_target { self.sample_target() } else { self.fixed_target };
        Ok(self.observation())
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if action.len() != self.spec.act_dim {
            return Err(EnvError::ActionWidth { expected: self.spec.act_dim, got: action.len() });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        for ((q, &a), j) in self.joints.iter_mut().zip(action).zip(&self.arm.joints) {
            let next = *q + a.clamp(-ACTION_LIMIT, ACTION_LIMIT);
            let clamped = next.clamp(j.limits.0, j.limits.1);
            if clamped != next {
                self.clamp_events += 1;
            }
            *q = clamped;
        }
        self.steps += 1;
        let pose = self.pose();
        let collision = self.spec.variant.uses_collision() && self.arm.collision_check(&self.joints);
        let r = reward(self.spec.variant, &pose, &self.spec.target, collision);
        let done = collision || self.steps >= self.spec.max_episode_steps;
        if done {
            self.started = false;
        }
        Ok(Transition { observation: self.observation(), reward: r, done })
    }

    fn snapshot(&self) -> Option<ReacherState> {
        Some(self.state())
    }

    fn restore(&mut self, state: &ReacherState) -> Result<(), EnvError> {
        Reacher::restore(self, state)
    }
}
