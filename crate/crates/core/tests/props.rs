mod common;

use polgrad::acktr::{factored_damping, stack_bias, split_bias, trust_region_rescale};
use polgrad::diffcore::Tensor;
use polgrad::envlink::{decode_frame, encode_frame, FrameDecoder};
use polgrad::envs::{make_env, Environment, ReacherOptions, ENV_NAMES};
use polgrad::policy::{DiagonalGaussian, Sharing};
use polgrad::ppo::clipped_terms;
use polgrad::rollout::{gae, normalize_advantages, rewards_to_go, Algo, TrainConfig};
use proptest::prelude::*;

fn reals(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(
        m0 in reals(1..6), seed in 0u64..1000,
    ) {
        let n = m0.len();
        let mut r = common::rng(seed);
        let ls0: Vec<f64> = (0..n).map(|_| 0.5 * common::normal(&mut r)).collect();
        let m1: Vec<f64> = (0..n).map(|_| common::normal(&mut r)).collect();
        let ls1: Vec<f64> = (0..n).map(|_| 0.5 * common::normal(&mut r)).collect();
        let p = DiagonalGaussian::new(m0, ls0);
        let q = DiagonalGaussian::new(m1, ls1);
        prop_assert!(p.kl(&q) >= 0.0);
        prop_assert!(p.kl(&p).abs() < 1e-12);
    }

    #[test]
    fn log_prob_integrates_against_entropy(mean in reals(1..4), seed in 0u64..1000) {
        // E[−log p] over samples approaches the entropy.
        let n = mean.len();
        let mut r = common::rng(seed);
        let ls: Vec<f64> = (0..n).map(|_| 0.3 * common::normal(&mut r)).collect();
        let d = DiagonalGaussian::new(mean, ls);
        let k = 4000;
        let avg = (0..k).map(|_| -d.log_prob(&d.sample(&mut r))).sum::<f64>() / k as f64;
        prop_assert!((avg - d.entropy()).abs() < 0.15 * n as f64);
    }

    #[test]
    fn clipped_terms_bounded_by_unclipped(r in reals(1..50), eps in 0.01..0.9f64, seed in 0u64..100) {
        let mut g = common::rng(seed);
        let ratio: Vec<f64> = r.iter().map(|x| (0.3 * x).exp()).collect();
        let adv: Vec<f64> = ratio.iter().map(|_| common::normal(&mut g)).collect();
        let t = clipped_terms(&ratio, &adv, eps).unwrap();
        for i in 0..t.len() {
            prop_assert!(t[i] <= ratio[i] * adv[i]);
        }
        let ones = vec![1.0; adv.len()];
        prop_assert_eq!(clipped_terms(&ones, &adv, eps).unwrap(), adv);
    }

    #[test]
    fn rewards_to_go_is_linear(rew in reals(1..60), k in -3.0..3.0f64, gamma in 0.0..1.0f64, seed in 0u64..100) {
        let mut g = common::rng(seed);
        let term: Vec<bool> = rew.iter().map(|_| common::normal(&mut g) > 1.2).collect();
        let base = rewards_to_go(&rew, &term, 0.0, gamma);
        let scaled: Vec<f64> = rew.iter().map(|x| k * x).collect();
        for (a, b) in rewards_to_go(&scaled, &term, 0.0, gamma).iter().zip(&base) {
            prop_assert!((a - k * b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn gae_shift_invariance_at_lambda_one(rew in reals(2..60), c in -3.0..3.0f64) {
        // With one terminal episode, adding c to every value changes Â by exactly −c.
        let n = rew.len();
        let mut term = vec![false; n];
        term[n - 1] = true;
        let vals: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let shifted: Vec<f64> = vals.iter().map(|v| v + c).collect();
        let a = gae(&rew, &vals, &term, 0.0, 0.9, 1.0);
        let b = gae(&rew, &shifted, &term, 0.0, 0.9, 1.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - c - y).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_advantages_are_standardized(adv in reals(2..100)) {
        let z = normalize_advantages(&adv);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        let var = z.iter().map(|x| x * x).sum::<f64>() / n;
        prop_assert!(var.abs() < 1e-9 || (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn frames_round_trip(kind in any::<u8>(), payload in prop::collection::vec(any::<u8>(), 0..300), cut in 0usize..400) {
        let bytes = encode_frame(kind, &payload);
        let f = decode_frame(&bytes).unwrap();
        prop_assert_eq!(f.kind, kind);
        prop_assert_eq!(&f.payload, &payload);
        let cut = cut.min(bytes.len());
        let mut dec = FrameDecoder::new();
        dec.push(&bytes[..cut]);
        if cut < bytes.len() {
            prop_assert!(dec.next_frame().unwrap().is_none());
        }
        dec.push(&bytes[cut..]);
        let g = dec.next_frame().unwrap().unwrap();
        prop_assert_eq!(g.payload, payload);
    }

    #[test]
    fn trust_region_rescale_respects_radius(d in reals(1..20), q in 1e-6..1e3f64, radius in 1e-4..0.1f64, eta_max in 0.01..2.0f64) {
        let (step, eta) = trust_region_rescale(&d, q, radius, eta_max);
        prop_assert!(eta <= eta_max);
        prop_assert!(eta * eta * q <= 2.0 * radius * (1.0 + 1e-12));
        for (s, x) in step.iter().zip(&d) {
            prop_assert_eq!(*s, eta * x);
        }
    }

    #[test]
    fn factored_damping_multiplies_to_damping(diag_a in prop::collection::vec(0.01..10.0f64, 1..6), diag_g in prop::collection::vec(0.01..10.0f64, 1..6), damping in 1e-6..1.0f64) {
        let (da, dg) = (diag_a.len(), diag_g.len());
        let mut a = vec![0.0; da * da];
        for i in 0..da { a[i * da + i] = diag_a[i]; }
        let mut g = vec![0.0; dg * dg];
        for i in 0..dg { g[i * dg + i] = diag_g[i]; }
        let (la, lg) = factored_damping(&a, da, &g, dg, damping);
        prop_assert!((la * lg - damping).abs() < 1e-12 * damping.max(1.0));
        let ta = diag_a.iter().sum::<f64>() / da as f64;
        let tg = diag_g.iter().sum::<f64>() / dg as f64;
        prop_assert!((la / lg - ta / tg).abs() < 1e-9 * (ta / tg));
    }

    #[test]
    fn bias_stacking_round_trips(inputs in 1usize..6, outputs in 1usize..6, seed in 0u64..100) {
        let mut r = common::rng(seed);
        let w = Tensor::matrix(inputs, outputs, (0..inputs * outputs).map(|_| common::normal(&mut r)).collect());
        let b = Tensor::vector((0..outputs).map(|_| common::normal(&mut r)).collect());
        let (w2, b2) = split_bias(&stack_bias(&w, &b), inputs, outputs);
        prop_assert_eq!(w2, w.data().to_vec());
        prop_assert_eq!(b2, b.data().to_vec());
    }

    #[test]
    fn flat_parameters_round_trip(seed in 0u64..1000, shared in any::<bool>()) {
        let sharing = if shared { Sharing::SharedTrunk } else { Sharing::Disjoint };
        let net = common::small_net(seed, 3, 2, &[4, 5], sharing);
        let other = common::perturbed(&net, 1.0, seed + 1);
        let mut n = net.clone();
        n.set_flat(&other.flat()).unwrap();
        prop_assert_eq!(&n, &other);
        n.set_policy_flat(&net.policy_flat()).unwrap();
        n.set_value_flat(&net.value_flat()).unwrap();
        prop_assert_eq!(n, net);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), steps in 0u64..10_000_000, gamma in 0.0..1.0f64, lr in 1e-6..1.0f64, algo in 0usize..3) {
        let cfg = TrainConfig {
            algo: [Algo::Trpo, Algo::Ppo, Algo::Acktr][algo],
            seed,
            total_steps: steps,
            gamma,
            lr,
            hidden: vec![7, 3],
            ..TrainConfig::default()
        };
        prop_assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn env_steps_stay_finite_and_capped(env in 0usize..5, seed in 0u64..1000) {
        let opts = ReacherOptions { max_episode_steps: 40, ..Default::default() };
        let mut e = make_env(ENV_NAMES[env], &opts).unwrap();
        e.seed(seed).unwrap();
        let mut r = common::rng(seed);
        let m = e.spec().act_dim;
        let mut obs = e.reset().unwrap();
        prop_assert_eq!(obs.len(), e.spec().obs_dim);
        let mut steps = 0;
        loop {
            let a: Vec<f64> = (0..m).map(|_| 5.0 * common::normal(&mut r)).collect();
            let t = e.step(&a).unwrap();
            steps += 1;
            prop_assert!(t.observation.iter().all(|x| x.is_finite()) && t.reward.is_finite());
            obs = t.observation;
            if t.done { break; }
        }
        prop_assert!(steps <= 40);
        prop_assert_eq!(obs.len(), e.spec().obs_dim);
    }
}
