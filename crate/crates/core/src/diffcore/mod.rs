//! Dense tensors with a reverse-mode tape.
//!
//! Two reverse sweeps are available. [`Tape::backward`] computes numeric
//! gradients and leaves the tape untouched. [`Tape::grad_graph`] records the
//! sweep as new tape nodes, so a gradient can itself be differentiated; this
//! is how [`hessian_vector_product`] obtains exact `H·v` products.
//!
//! Parameter flattening order is fixed: layers in order, weight before bias
//! within a layer, each tensor row-major.

pub mod linalg;
mod mlp;
mod tape;
mod tensor;

pub use mlp::{
    assign_flat, flatten_params, mlp_forward, unflatten_params, Activation, Linear, LinearVars, Mlp, MlpTrace,
    MlpVars,
};
pub use tape::{Gradients, Op, Tape, Var};
pub use tensor::Tensor;

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Value and flat gradient of a scalar function of `params`.
///
/// `build` receives a fresh tape and the bound parameter handles.
pub fn value_and_gradient<T, F>(params: &[Tensor<T>], build: F) -> Result<(T, Vec<T>), AdError>
where
    T: Scalar,
    F: FnOnce(&mut Tape<T>, &[Var]) -> Result<Var, AdError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward_wrt(out, &vars)?;
    let refs: Vec<&Tensor<T>> = grads.iter().collect();
    Ok((tape.value(out).item(), flatten_params(&refs)))
}

/// `H·v` for the Hessian of the scalar built by `build`, via the gradient of
/// `∇f · v`.
pub fn hessian_vector_product<T, F>(params: &[Tensor<T>], v: &[T], build: F) -> Result<Vec<T>, AdError>
where
    T: Scalar,
    F: FnOnce(&mut Tape<T>, &[Var]) -> Result<Var, AdError>,
{
    let total: usize = params.iter().map(Tensor::len).sum();
    if v.len() != total {
        return Err(AdError::Contract(format!("hvp: vector of length {} for {total} parameters", v.len())));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.grad_graph(out, &vars)?;

    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    let pieces = unflatten_params(v, &shapes)?;
    let mut terms = Vec::with_capacity(grads.len());
    for (g, piece) in grads.iter().zip(pieces) {
        let c = tape.constant(piece);
        terms.push(tape.dot(*g, c));
    }
    let mut gv = terms[0];
    for &t in &terms[1..] {
        gv = tape.add(gv, t);
    }
    let hv = tape.backward_wrt(gv, &vars)?;
    let refs: Vec<&Tensor<T>> = hv.iter().collect();
    Ok(flatten_params(&refs))
}
