use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::Scalar;

use super::{AdError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    fn record<T: Scalar>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Affine layer `y = x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Tensor::zeros(&[input, output]), bias: Tensor::zeros(&[output]) }
    }

    /// Gaussian init with standard deviation `gain / sqrt(input)`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let scale = gain / (input as f64).sqrt();
        let data = (0..input * output)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal) * scale))
            .collect();
        Self { weight: Tensor::matrix(input, output, data), bias: Tensor::zeros(&[output]) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Multilayer perceptron: hidden activation between layers, configurable
/// activation on the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Tape handles for one bound layer.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<LinearVars>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Output of a recorded forward pass, with the per-layer nodes curvature
/// estimators need.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub output: Var,
    pub layer_inputs: Vec<Var>,
    pub preactivations: Vec<Var>,
}

impl<T: Scalar> Mlp<T> {
    /// `sizes = [in, h1, ..., out]`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { output_gain } else { 1.0 };
                Linear::init(sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Self { layers, hidden_activation, output_activation }
    }

    pub fn zeros(sizes: &[usize], hidden_activation: Activation, output_activation: Activation) -> Self {
        let layers = sizes.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Self { layers, hidden_activation, output_activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Linear::output_dim));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in flattening order: per layer, weight then bias.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Tape-free forward pass on one input vector.
    pub fn forward_plain(&self, input: &[T]) -> Vec<T> {
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (layer.input_dim(), layer.output_dim());
            debug_assert_eq!(x.len(), fan_in);
            let mut y = layer.bias.data().to_vec();
            let w = layer.weight.data();
            for (p, &xp) in x.iter().enumerate() {
                let row = &w[p * fan_out..(p + 1) * fan_out];
                for (o, &wv) in y.iter_mut().zip(row) {
                    *o += xp * wv;
                }
            }
            let act = self.activation_for(i);
            for v in &mut y {
                *v = act.apply(*v);
            }
            x = y;
        }
        x
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| LinearVars { weight: tape.param(l.weight.clone()), bias: tape.param(l.bias.clone()) })
            .collect();
        MlpVars { layers, hidden_activation: self.hidden_activation, output_activation: self.output_activation }
    }
}

impl MlpVars {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

/// Records the forward pass of `net` on `input: [batch, in]`.
pub fn mlp_forward<T: Scalar>(tape: &mut Tape<T>, net: &MlpVars, input: Var) -> Result<MlpTrace, AdError> {
    let shape = tape.value(input).shape();
    if shape.len() != 2 {
        return Err(AdError::Shape(format!("mlp input must be [batch, features], got {shape:?}")));
    }
    let mut x = input;
    let mut layer_inputs = Vec::with_capacity(net.layers.len());
    let mut preactivations = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let width = tape.value(x).cols();
        let wshape = tape.value(layer.weight).shape().to_vec();
        let bshape = tape.value(layer.bias).shape().to_vec();
        if wshape.len() != 2 || wshape[0] != width {
            return Err(AdError::Shape(format!(
                "layer {i}: weight {wshape:?} does not accept input width {width}"
            )));
        }
        if bshape != [wshape[1]] {
            return Err(AdError::Shape(format!("layer {i}: bias {bshape:?} does not match weight {wshape:?}")));
        }
        layer_inputs.push(x);
        let z = tape.affine(x, layer.weight, layer.bias);
        preactivations.push(z);
        let act = if i + 1 == net.layers.len() { net.output_activation } else { net.hidden_activation };
        x = act.record(tape, z);
    }
    Ok(MlpTrace { output: x, layer_inputs, preactivations })
}

/// Row-major concatenation of the given tensors, in order.
pub fn flatten_params<T: Scalar>(params: &[&Tensor<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(params.iter().map(|t| t.len()).sum());
    for t in params {
        out.extend_from_slice(t.data());
    }
    out
}

/// Inverse of [`flatten_params`] for the given shapes.
pub fn unflatten_params<T: Scalar>(flat: &[T], shapes: &[Vec<usize>]) -> Result<Vec<Tensor<T>>, AdError> {
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if total != flat.len() {
        return Err(AdError::Contract(format!("unflatten: {} values for {total} parameters", flat.len())));
    }
    let mut off = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::new(s.clone(), flat[off..off + n].to_vec());
            off += n;
            t
        })
        .collect()
}

/// Overwrites `targets` in order from `flat`.
pub fn assign_flat<T: Scalar>(targets: Vec<&mut Tensor<T>>, flat: &[T]) -> Result<(), AdError> {
    let total: usize = targets.iter().map(|t| t.len()).sum();
    if total != flat.len() {
        return Err(AdError::Contract(format!("assign: {} values for {total} parameters", flat.len())));
    }
    let mut off = 0;
    for t in targets {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    Ok(())
}
