use serde::{Deserialize, Serialize};

use crate::diffcore::linalg::{matmul, spd_inverse, symmetric_eigenvalues};
use crate::diffcore::Tensor;
use crate::report::UpdateError;
use crate::Scalar;

/// Kronecker factors of one affine layer `y = x·W + b`, `W: [in, out]`.
///
/// `A` is `(in+1)²` over inputs augmented with a trailing 1; `G` is `out²`
/// over output-side gradients. Both are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfacLayerState<T> {
    pub layer: usize,
    pub dim_a: usize,
    pub dim_g: usize,
    pub a: Vec<T>,
    pub g: Vec<T>,
    /// Number of accumulation calls so far.
    pub samples: u64,
    pub a_inv: Option<Vec<T>>,
    pub g_inv: Option<Vec<T>>,
    /// Updates since the inverses were last recomputed.
    pub staleness: usize,
    pub lambda_a: T,
    pub lambda_g: T,
    /// Largest condition number of the damped factors at the last refresh, 0 before the first.
    pub condition: T,
}

impl<T: Scalar> KfacLayerState<T> {
    pub fn new(layer: usize, inputs: usize, outputs: usize) -> Self {
        let (da, dg) = (inputs + 1, outputs);
        Self {
            layer,
            dim_a: da,
            dim_g: dg,
            a: vec![T::zero(); da * da],
            g: vec![T::zero(); dg * dg],
            samples: 0,
            a_inv: None,
            g_inv: None,
            staleness: 0,
            lambda_a: T::zero(),
            lambda_g: T::zero(),
            condition: T::zero(),
        }
    }

    pub fn needs_refresh(&self, interval: usize) -> bool {
        self.a_inv.is_none() || self.staleness >= interval
    }

    /// Inverts the damped factors and resets the staleness counter.
    pub fn refresh_inverses(&mut self, damping: T) -> Result<(), UpdateError> {
        let (la, lg) = factored_damping(&self.a, self.dim_a, &self.g, self.dim_g, damping);
        let a = damped(&self.a, self.dim_a, la);
        let g = damped(&self.g, self.dim_g, lg);
        let fail = |which: &str| UpdateError::NonFinite(format!("layer {}: damped {which} factor is not positive definite", self.layer));
        self.a_inv = Some(spd_inverse(&a, self.dim_a).ok_or_else(|| fail("A"))?);
        self.g_inv = Some(spd_inverse(&g, self.dim_g).ok_or_else(|| fail("G"))?);
        let cond = |m: &[T], n: usize| {
            let ev = symmetric_eigenvalues(m, n);
            ev[n - 1] / ev[0]
        };
        self.condition = cond(&a, self.dim_a).max(cond(&g, self.dim_g));
        self.lambda_a = la;
        self.lambda_g = lg;
        self.staleness = 0;
        Ok(())
    }

    /// `(A+λ_A I)⁻¹ · ∇W̄ · (G+λ_G I)⁻¹` with the cached inverses.
    pub fn precondition(&self, grad: &[T]) -> Result<Vec<T>, UpdateError> {
        let (Some(ai), Some(gi)) = (&self.a_inv, &self.g_inv) else {
            return Err(UpdateError::Config(format!("layer {}: inverses not computed", self.layer)));
        };
        check_grad(grad, self.dim_a, self.dim_g)?;
        let left = matmul(ai, grad, self.dim_a, self.dim_a, self.dim_g);
        Ok(matmul(&left, gi, self.dim_a, self.dim_g, self.dim_g))
    }

    /// `vec(Δ)ᵀ (A ⊗ G) vec(Δ) = tr(Δᵀ A Δ G)` with the undamped factors.
    pub fn quadratic_form(&self, delta: &[T]) -> T {
        let (da, dg) = (self.dim_a, self.dim_g);
        let ad = matmul(&self.a, delta, da, da, dg);
        let adg = matmul(&ad, &self.g, da, dg, dg);
        delta.iter().zip(&adg).map(|(&x, &y)| x * y).sum()
    }
}

fn check_grad<T>(grad: &[T], da: usize, dg: usize) -> Result<(), UpdateError> {
    if grad.len() != da * dg {
        return Err(UpdateError::Config(format!("gradient of length {} for a {da}x{dg} layer", grad.len())));
    }
    Ok(())
}

fn damped<T: Scalar>(m: &[T], n: usize, lambda: T) -> Vec<T> {
    let mut out = m.to_vec();
    for i in 0..n {
        out[i * n + i] += lambda;
    }
    out
}

/// Splits `λ_d` as `λ_A = π√λ_d`, `λ_G = √λ_d/π` with
/// `π = sqrt((tr A / dim A) / (tr G / dim G))`; `π = 1` if either trace vanishes.
pub fn factored_damping<T: Scalar>(a: &[T], da: usize, g: &[T], dg: usize, damping: T) -> (T, T) {
    let tr = |m: &[T], n: usize| (0..n).map(|i| m[i * n + i]).sum::<T>() / T::from_usize_lossy(n);
    let (ta, tg) = (tr(a, da), tr(g, dg));
    let pi = if ta > T::zero() && tg > T::zero() && (ta / tg).is_finite() { (ta / tg).sqrt() } else { T::one() };
    let s = damping.sqrt();
    (pi * s, s / pi)
}

/// `A ← decay·A + (1−decay)·mean(ā āᵀ)` and likewise for `G`, where `ā` is
/// `a` with a trailing 1. The first call stores the batch statistics as is.
pub fn accumulate_factors<T: Scalar>(
    state: &mut KfacLayerState<T>,
    a: &Tensor<T>,
    g: &Tensor<T>,
    decay: T,
) -> Result<(), UpdateError> {
    let b = a.rows();
    if g.rows() != b || a.cols() + 1 != state.dim_a || g.cols() != state.dim_g || b == 0 {
        return Err(UpdateError::Config(format!(
            "layer {}: factor inputs {:?}/{:?} do not match a {}x{} layer",
            state.layer,
            a.shape(),
            g.shape(),
            state.dim_a - 1,
            state.dim_g
        )));
    }
    let inv_b = T::one() / T::from_usize_lossy(b);
    let mut aug = Vec::with_capacity(b * state.dim_a);
    for r in 0..b {
        aug.extend_from_slice(a.row(r));
        aug.push(T::one());
    }
    let batch_a = gram(&aug, b, state.dim_a, inv_b);
    let batch_g = gram(g.data(), b, state.dim_g, inv_b);
    let keep = if state.samples == 0 { T::zero() } else { decay };
    let mix = |old: &mut [T], new: &[T]| {
        for (o, &n) in old.iter_mut().zip(new) {
            *o = keep * *o + (T::one() - keep) * n;
        }
    };
    mix(&mut state.a, &batch_a);
    mix(&mut state.g, &batch_g);
    state.samples += 1;
    Ok(())
}

/// `scale · Xᵀ X` for row-major `X: [rows, d]`, exactly symmetric.
fn gram<T: Scalar>(x: &[T], rows: usize, d: usize, scale: T) -> Vec<T> {
    let mut out = vec![T::zero(); d * d];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        for i in 0..d {
            let xi = row[i];
            if xi == T::zero() {
                continue;
            }
            for j in i..d {
                out[i * d + j] += xi * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = out[i * d + j] * scale;
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
    out
}

/// Preconditions `∇W̄` (`[in+1, out]`, bias as the last row), refreshing the
/// inverses first when they are missing or older than `refresh_interval`.
pub fn kfac_step<T: Scalar>(
    grad: &[T],
    state: &mut KfacLayerState<T>,
    damping: T,
    refresh_interval: usize,
) -> Result<Vec<T>, UpdateError> {
    check_grad(grad, state.dim_a, state.dim_g)?;
    if state.needs_refresh(refresh_interval) {
        state.refresh_inverses(damping)?;
    }
    state.precondition(grad)
}

/// `η = min(η_max, sqrt(2δ / ΔᵀF̂Δ))`; returns `(η·Δ, η)`. A non-positive
/// quadratic form leaves `η = η_max`.
pub fn trust_region_rescale<T: Scalar>(delta: &[T], quad: T, radius: T, eta_max: T) -> (Vec<T>, T) {
    if delta.iter().all(|&d| d == T::zero()) {
        return (vec![T::zero(); delta.len()], T::zero());
    }
    let eta = if quad > T::zero() { eta_max.min((T::lit(2.0) * radius / quad).sqrt()) } else { eta_max };
    (delta.iter().map(|&d| eta * d).collect(), eta)
}

/// Stacks `∇W` and `∇b` into `∇W̄ = [∇W; ∇bᵀ]`.
pub fn stack_bias<T: Scalar>(w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let mut out = w.data().to_vec();
    out.extend_from_slice(b.data());
    out
}

/// Inverse of [`stack_bias`].
pub fn split_bias<T: Scalar>(wbar: &[T], inputs: usize, outputs: usize) -> (Vec<T>, Vec<T>) {
    let (w, b) = wbar.split_at(inputs * outputs);
    (w.to_vec(), b.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_outer_product() {
        let mut s = KfacLayerState::<f64>::new(0, 3, 1);
        accumulate_factors(&mut s, &Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]), &Tensor::matrix(1, 1, vec![2.0]), 0.99)
            .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.a[i * 4 + j], if i == 0 && j == 0 { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(s.a[15], 1.0);
        assert_eq!(s.g, vec![4.0]);
    }

    #[test]
    fn zero_decay_keeps_latest_batch() {
        let mut s = KfacLayerState::<f64>::new(0, 1, 1);
        let one = |x: f64| Tensor::matrix(1, 1, vec![x]);
        accumulate_factors(&mut s, &one(3.0), &one(1.0), 0.0).unwrap();
        accumulate_factors(&mut s, &one(2.0), &one(5.0), 0.0).unwrap();
        assert_eq!(s.a, vec![4.0, 2.0, 2.0, 1.0]);
        assert_eq!(s.g, vec![25.0]);
    }

    #[test]
    fn identity_factors_scale_by_damping() {
        let mut s = KfacLayerState::<f64>::new(0, 2, 2);
        s.a = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        s.g = vec![1.0, 0.0, 0.0, 1.0];
        s.samples = 1;
        let lam: f64 = 0.3;
        let grad: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let out = kfac_step(&grad, &mut s, lam * lam, 10).unwrap();
        assert!((s.lambda_a - lam).abs() < 1e-15 && (s.lambda_g - lam).abs() < 1e-15);
        for (o, g) in out.iter().zip(&grad) {
            assert!((o - g / (1.0 + lam).powi(2)).abs() < 1e-14);
        }
        let zero = kfac_step(&[0.0; 6], &mut s, lam * lam, 10).unwrap();
        assert_eq!(zero, vec![0.0; 6]);
    }

    #[test]
    fn rescale_examples() {
        let (step, eta) = trust_region_rescale(&[1.0, 2.0], 0.004, 0.002, 10.0);
        assert_eq!(eta, 1.0);
        assert_eq!(step, vec![1.0, 2.0]);
        let (step, eta) = trust_region_rescale(&[0.0, 0.0], 1.0, 0.002, 10.0);
        assert_eq!((step, eta), (vec![0.0, 0.0], 0.0));
        let (_, eta) = trust_region_rescale(&[1.0], 1e-12, 0.002, 0.25);
        assert_eq!(eta, 0.25);
    }

    #[test]
    fn refresh_tracks_staleness() {
        let mut s = KfacLayerState::<f64>::new(0, 1, 1);
        accumulate_factors(&mut s, &Tensor::matrix(1, 1, vec![1.0]), &Tensor::matrix(1, 1, vec![1.0]), 0.9).unwrap();
        assert!(s.needs_refresh(3));
        s.refresh_inverses(0.01).unwrap();
        s.staleness = 2;
        assert!(!s.needs_refresh(3));
        s.staleness = 3;
        assert!(s.needs_refresh(3));
    }
}
