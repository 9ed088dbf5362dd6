use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    assign_flat, flatten_params, mlp_forward, Activation, AdError, Mlp, MlpTrace, MlpVars, Tape, Tensor, Var,
};
use crate::Scalar;

use super::gaussian::{DiagonalGaussian, LOG_STD_MAX, LOG_STD_MIN};
use super::PolicyError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sharing {
    /// Separate policy and value networks.
    Disjoint,
    /// A tanh trunk feeding a linear policy head and a linear value head.
    SharedTrunk,
}

impl std::str::FromStr for Sharing {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "disjoint" => Ok(Sharing::Disjoint),
            "shared" | "shared-trunk" => Ok(Sharing::SharedTrunk),
            _ => Err(format!("unknown sharing mode `{s}` (disjoint|shared)")),
        }
    }
}

impl std::fmt::Display for Sharing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sharing::Disjoint => "disjoint",
            Sharing::SharedTrunk => "shared",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub sharing: Sharing,
    pub log_std_init: f64,
}

impl NetConfig {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self { obs_dim, act_dim, hidden: vec![64, 64], sharing: Sharing::Disjoint, log_std_init: 0.0 }
    }
}

/// Gaussian policy with a state-independent `log_std` plus a scalar value head.
///
/// Flat parameter order: trunk layers (shared mode only), policy layers,
/// `log_std`, value layers. In disjoint mode the policy group is the prefix
/// up to and including `log_std`; the value group is the suffix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyValueNet<T> {
    pub config: NetConfig,
    pub trunk: Option<Mlp<T>>,
    pub policy: Mlp<T>,
    pub value: Mlp<T>,
    pub log_std: Tensor<T>,
}

/// One affine layer as seen by a recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LayerTrace {
    /// Index into [`PolicyValueNet::layer_shapes`] order (trunk, policy, value).
    pub layer: usize,
    pub weight: Var,
    pub bias: Var,
    pub input: Var,
    pub preactivation: Var,
}

/// Parameters of a [`PolicyValueNet`] bound to a tape.
#[derive(Clone, Debug)]
pub struct NetVars {
    pub trunk: Option<MlpVars>,
    pub policy: MlpVars,
    pub value: MlpVars,
    pub log_std: Var,
    trunk_layers: usize,
    policy_layers: usize,
}

#[derive(Clone, Debug)]
pub struct PolicyOut {
    /// `[B, M]`
    pub mean: Var,
    /// `[M]`, clamped.
    pub log_std: Var,
    pub layers: Vec<LayerTrace>,
}

#[derive(Clone, Debug)]
pub struct ValueOut {
    /// `[B]`
    pub value: Var,
    pub layers: Vec<LayerTrace>,
}

#[derive(Clone, Debug)]
pub struct JointOut {
    pub mean: Var,
    pub log_std: Var,
    pub value: Var,
    pub layers: Vec<LayerTrace>,
}

fn traces(mlp: &MlpVars, trace: &MlpTrace, offset: usize) -> Vec<LayerTrace> {
    mlp.layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerTrace {
            layer: offset + i,
            weight: l.weight,
            bias: l.bias,
            input: trace.layer_inputs[i],
            preactivation: trace.preactivations[i],
        })
        .collect()
}

impl<T: Scalar> PolicyValueNet<T> {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Self {
        let (n, m) = (config.obs_dim, config.act_dim);
        let h = &config.hidden;
        let (trunk, policy, value) = match config.sharing {
            Sharing::Disjoint => {
                let sizes = |out| [&[n][..], h, &[out]].concat();
                let policy = Mlp::init(&sizes(m), Activation::Tanh, Activation::Identity, 0.01, rng);
                let value = Mlp::init(&sizes(1), Activation::Tanh, Activation::Identity, 1.0, rng);
                (None, policy, value)
            }
            Sharing::SharedTrunk => {
                let trunk_sizes = [&[n][..], h].concat();
                let width = *trunk_sizes.last().unwrap();
                let trunk = Mlp::init(&trunk_sizes, Activation::Tanh, Activation::Tanh, 1.0, rng);
                let policy = Mlp::init(&[width, m], Activation::Tanh, Activation::Identity, 0.01, rng);
                let value = Mlp::init(&[width, 1], Activation::Tanh, Activation::Identity, 1.0, rng);
                (Some(trunk), policy, value)
            }
        };
        let log_std = Tensor::full(&[m], T::lit(config.log_std_init));
        Self { config, trunk, policy, value, log_std }
    }

    /// Same architecture as [`new`](Self::new) with every weight and bias zero.
    pub fn zeros(config: NetConfig) -> Self {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(config, &mut rng);
        let zeros = vec![T::zero(); net.param_count()];
        net.set_flat(&zeros).expect("matching length");
        net.log_std = Tensor::full(&[net.config.act_dim], T::lit(net.config.log_std_init));
        net
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.config.act_dim
    }

    pub fn sharing(&self) -> Sharing {
        self.config.sharing
    }

    fn check_obs(&self, got: usize) -> Result<(), PolicyError> {
        if got != self.obs_dim() {
            return Err(PolicyError::ObservationWidth { expected: self.obs_dim(), got });
        }
        Ok(())
    }

    fn features(&self, obs: &[T]) -> Vec<T> {
        match &self.trunk {
            Some(t) => t.forward_plain(obs),
            None => obs.to_vec(),
        }
    }

    pub fn policy_forward(&self, obs: &[T]) -> Result<DiagonalGaussian<T>, PolicyError> {
        self.check_obs(obs.len())?;
        let mean = self.policy.forward_plain(&self.features(obs));
        Ok(DiagonalGaussian::new(mean, self.log_std.data().to_vec()))
    }

    pub fn value_forward(&self, obs: &[T]) -> Result<T, PolicyError> {
        self.check_obs(obs.len())?;
        Ok(self.value.forward_plain(&self.features(obs))[0])
    }

    /// Affine layers in trunk, policy, value order.
    pub fn layers(&self) -> Vec<&crate::diffcore::Linear<T>> {
        self.trunk
            .iter()
            .flat_map(|t| t.layers.iter())
            .chain(self.policy.layers.iter())
            .chain(self.value.layers.iter())
            .collect()
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers().iter().map(|l| (l.input_dim(), l.output_dim())).collect()
    }

    /// Index of `log_std`'s first element in the flat vector.
    pub fn log_std_offset(&self) -> usize {
        self.trunk.as_ref().map_or(0, Mlp::param_count) + self.policy.param_count()
    }

    /// All tensors in flat order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = self.trunk.iter().flat_map(Mlp::tensors).collect();
        v.extend(self.policy.tensors());
        v.push(&self.log_std);
        v.extend(self.value.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = self.trunk.iter_mut().flat_map(Mlp::tensors_mut).collect();
        v.extend(self.policy.tensors_mut());
        v.push(&mut self.log_std);
        v.extend(self.value.tensors_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn policy_param_count(&self) -> usize {
        self.log_std_offset() + self.log_std.len()
    }

    pub fn flat(&self) -> Vec<T> {
        flatten_params(&self.tensors())
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<(), AdError> {
        assign_flat(self.tensors_mut(), flat)
    }

    /// Policy group θ: trunk (if any), policy layers, `log_std`.
    pub fn policy_flat(&self) -> Vec<T> {
        self.flat()[..self.policy_param_count()].to_vec()
    }

    pub fn set_policy_flat(&mut self, theta: &[T]) -> Result<(), AdError> {
        let mut all = self.flat();
        let k = self.policy_param_count();
        if theta.len() != k {
            return Err(AdError::Contract(format!("policy group has {k} parameters, got {}", theta.len())));
        }
        all[..k].copy_from_slice(theta);
        self.set_flat(&all)
    }

    /// Value group φ: the value layers.
    pub fn value_flat(&self) -> Vec<T> {
        self.flat()[self.policy_param_count()..].to_vec()
    }

    pub fn set_value_flat(&mut self, phi: &[T]) -> Result<(), AdError> {
        let mut all = self.flat();
        let k = self.policy_param_count();
        if phi.len() != all.len() - k {
            return Err(AdError::Contract(format!(
                "value group has {} parameters, got {}",
                all.len() - k,
                phi.len()
            )));
        }
        all[k..].copy_from_slice(phi);
        self.set_flat(&all)
    }

    /// Binds every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> NetVars {
        let trunk = self.trunk.as_ref().map(|t| t.bind(tape));
        let policy = self.policy.bind(tape);
        let log_std = tape.param(self.log_std.clone());
        let value = self.value.bind(tape);
        NetVars {
            trunk_layers: self.trunk.as_ref().map_or(0, |t| t.layers.len()),
            policy_layers: self.policy.layers.len(),
            trunk,
            policy,
            value,
            log_std,
        }
    }

    /// Distribution parameters for each row of `obs: [B, N]`, evaluated without a tape.
    pub fn policy_batch(&self, obs: &Tensor<T>) -> Result<Vec<DiagonalGaussian<T>>, PolicyError> {
        (0..obs.rows()).map(|i| self.policy_forward(obs.row(i))).collect()
    }
}

impl NetVars {
    /// Flat-order handles (matches [`PolicyValueNet::tensors`]).
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.trunk.iter().flat_map(MlpVars::vars).collect();
        v.extend(self.policy.vars());
        v.push(self.log_std);
        v.extend(self.value.vars());
        v
    }

    pub fn policy_group(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.trunk.iter().flat_map(MlpVars::vars).collect();
        v.extend(self.policy.vars());
        v.push(self.log_std);
        v
    }

    pub fn value_group(&self) -> Vec<Var> {
        self.value.vars()
    }

    fn check<T: Scalar>(tape: &Tape<T>, obs: Var, width: usize) -> Result<(), PolicyError> {
        let got = tape.value(obs).cols();
        if tape.value(obs).shape().len() != 2 || got != width {
            return Err(PolicyError::ObservationWidth { expected: width, got });
        }
        Ok(())
    }

    fn trunk_features<T: Scalar>(&self, tape: &mut Tape<T>, obs: Var) -> Result<(Var, Vec<LayerTrace>), PolicyError> {
        match &self.trunk {
            Some(t) => {
                let tr = mlp_forward(tape, t, obs)?;
                Ok((tr.output, traces(t, &tr, 0)))
            }
            None => Ok((obs, vec![])),
        }
    }

    fn policy_head<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Var, Vec<LayerTrace>), PolicyError> {
        let tr = mlp_forward(tape, &self.policy, x)?;
        let log_std = tape.clamp(self.log_std, T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        Ok((tr.output, log_std, traces(&self.policy, &tr, self.trunk_layers)))
    }

    fn value_head<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Vec<LayerTrace>), PolicyError> {
        let tr = mlp_forward(tape, &self.value, x)?;
        let v = tape.sum_cols(tr.output);
        Ok((v, traces(&self.value, &tr, self.trunk_layers + self.policy_layers)))
    }

    pub fn policy_dist<T: Scalar>(&self, tape: &mut Tape<T>, obs: Var, obs_dim: usize) -> Result<PolicyOut, PolicyError> {
        Self::check(tape, obs, obs_dim)?;
        let (x, mut layers) = self.trunk_features(tape, obs)?;
        let (mean, log_std, head) = self.policy_head(tape, x)?;
        layers.extend(head);
        Ok(PolicyOut { mean, log_std, layers })
    }

    pub fn value<T: Scalar>(&self, tape: &mut Tape<T>, obs: Var, obs_dim: usize) -> Result<ValueOut, PolicyError> {
        Self::check(tape, obs, obs_dim)?;
        let (x, mut layers) = self.trunk_features(tape, obs)?;
        let (value, head) = self.value_head(tape, x)?;
        layers.extend(head);
        Ok(ValueOut { value, layers })
    }

    /// Policy and value from a single trunk evaluation.
    pub fn joint<T: Scalar>(&self, tape: &mut Tape<T>, obs: Var, obs_dim: usize) -> Result<JointOut, PolicyError> {
        Self::check(tape, obs, obs_dim)?;
        let (x, mut layers) = self.trunk_features(tape, obs)?;
        let (mean, log_std, ph) = self.policy_head(tape, x)?;
        let (value, vh) = self.value_head(tape, x)?;
        layers.extend(ph);
        layers.extend(vh);
        Ok(JointOut { mean, log_std, value, layers })
    }
}
