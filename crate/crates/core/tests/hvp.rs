mod common;

use common::*;
use polgrad::diffcore::{hessian_vector_product, Tensor};
use polgrad::policy::Sharing;
use polgrad::trpo::{mean_kl, KlCurvature};

#[test]
fn kl_hvp_matches_mixed_finite_differences() {
    let h = 1e-4;
    for seed in 0..5 {
        let net = small_net(seed, 3, 2, &[6], Sharing::Disjoint);
        let batch = synthetic_batch(&net, 16, seed + 10);
        let theta = net.policy_flat();
        let mut r = rng(seed + 20);
        let v: Vec<f64> = (0..theta.len()).map(|_| normal(&mut r)).collect();
        let mut curv = KlCurvature::new(&net, &batch.observations, 0.0).unwrap();
        let hv = curv.hvp(&v).unwrap();

        let kl = |di: usize, si: f64, sv: f64| {
            let mut t = theta.clone();
            t[di] += si * h;
            for (x, vi) in t.iter_mut().zip(&v) {
                *x += sv * h * vi;
            }
            let mut n = net.clone();
            n.set_policy_flat(&t).unwrap();
            mean_kl(&n, &batch).unwrap()
        };
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| (kl(i, 1.0, 1.0) - kl(i, 1.0, -1.0) - kl(i, -1.0, 1.0) + kl(i, -1.0, -1.0)) / (4.0 * h * h))
            .collect();
        let e = relative_error(&hv, &fd);
        assert!(e < 1e-4, "seed {seed}: relative error {e:e}");
    }
}

#[test]
fn kl_curvature_is_symmetric_psd_and_damped() {
    let net = small_net(3, 4, 2, &[5], Sharing::Disjoint);
    let batch = synthetic_batch(&net, 12, 4);
    let mut curv = KlCurvature::new(&net, &batch.observations, 0.1).unwrap();
    let mut r = rng(5);
    let n = curv.dim();
    for _ in 0..10 {
        let u: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let w: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let hu = curv.hvp(&u).unwrap();
        let hw = curv.hvp(&w).unwrap();
        let uhw: f64 = u.iter().zip(&hw).map(|(a, b)| a * b).sum();
        let whu: f64 = w.iter().zip(&hu).map(|(a, b)| a * b).sum();
        assert!((uhw - whu).abs() < 1e-10 * (1.0 + uhw.abs()));
        assert!(u.iter().zip(&hu).map(|(a, b)| a * b).sum::<f64>() >= -1e-12);
        let damped = curv.apply(&u).unwrap();
        for i in 0..n {
            assert!((damped[i] - hu[i] - 0.1 * u[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn log_std_block_of_kl_hessian_is_two() {
    let net = small_net(6, 3, 2, &[4], Sharing::Disjoint);
    let batch = synthetic_batch(&net, 8, 7);
    let mut curv = KlCurvature::new(&net, &batch.observations, 0.0).unwrap();
    let off = net.log_std_offset();
    let mut e = vec![0.0; curv.dim()];
    e[off] = 1.0;
    let hv = curv.hvp(&e).unwrap();
    assert!((hv[off] - 2.0).abs() < 1e-12);
    assert!(hv[off + 1].abs() < 1e-12);
}

#[test]
fn quadratic_hvp_is_exact() {
    let mut r = rng(8);
    let n = 6;
    let a = random_spd(&mut r, n, 0.2);
    let v: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let x: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let am = Tensor::matrix(n, n, a.clone());
    let hv = hessian_vector_product(&[Tensor::matrix(n, 1, x)], &v, |tape, p| {
        let a = tape.constant(am.clone());
        let ax = tape.matmul(a, p[0]);
        let q = tape.dot(p[0], ax);
        Ok(tape.scale(q, 0.5))
    })
    .unwrap();
    assert!(relative_error(&hv, &matvec(&a, &v)) < 1e-14);
}
