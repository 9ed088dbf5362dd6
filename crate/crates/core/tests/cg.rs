mod common;

use common::*;
use polgrad::trpo::conjugate_gradient;
use rand::Rng;

#[test]
fn cg_matches_dense_solve_on_random_spd_systems() {
    let mut r = rng(7);
    let start = std::time::Instant::now();
    for case in 0..100 {
        let n = r.random_range(1..=64);
        let a = random_spd(&mut r, n, 0.5);
        let b: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let sol = conjugate_gradient(|v| Ok(matvec(&a, v)), &b, 4 * n, 1e-14).unwrap();
        assert!(sol.iterations <= 4 * n);

        let ax = matvec(&a, &sol.x);
        let res: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        assert!(norm(&res) < 1e-8, "case {case} (n={n}): residual {:e}", norm(&res));
        assert!(sol.residual < 1e-8, "case {case}: reported residual {:e}", sol.residual);

        let exact = dense_solve(&a, &b);
        let err = exact.iter().zip(&sol.x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "case {case} (n={n}): max deviation {err:e}");
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn cg_zero_rhs_is_zero() {
    let a = random_spd(&mut rng(1), 5, 1.0);
    let sol = conjugate_gradient(|v| Ok(matvec(&a, v)), &[0.0; 5], 10, 1e-10).unwrap();
    assert_eq!(sol.x, vec![0.0; 5]);
    assert_eq!(sol.iterations, 0);
}

#[test]
fn cg_rejects_indefinite_operator() {
    let a = vec![1.0, 0.0, 0.0, -1.0];
    assert!(conjugate_gradient(|v| Ok(matvec(&a, v)), &[0.0, 1.0], 4, 1e-10).is_err());
}

#[test]
fn cg_respects_iteration_cap() {
    let a = random_spd(&mut rng(3), 30, 0.01);
    let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
    let sol = conjugate_gradient(|v| Ok(matvec(&a, v)), &b, 3, 0.0).unwrap();
    assert_eq!(sol.iterations, 3);
}
