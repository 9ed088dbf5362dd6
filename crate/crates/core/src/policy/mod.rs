//! Gaussian policies and value heads.
//!
//! Evaluation comes in two forms: plain per-observation methods used while
//! collecting rollouts, and tape-recorded batched forms used by the update
//! rules ([`NetVars`], [`log_prob_graph`], [`kl_graph`]).

mod gaussian;
mod net;

pub use gaussian::{entropy_graph, kl_graph, log_prob_graph, DiagonalGaussian, LOG_STD_MAX, LOG_STD_MIN};
pub use net::{JointOut, LayerTrace, NetConfig, NetVars, PolicyOut, PolicyValueNet, Sharing, ValueOut};

use crate::diffcore::AdError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("observation has width {got}, network expects {expected}")]
    ObservationWidth { expected: usize, got: usize },
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Tape, Tensor};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(mean: &[f64], log_std: &[f64]) -> DiagonalGaussian<f64> {
        DiagonalGaussian::new(mean.to_vec(), log_std.to_vec())
    }

    #[test]
    fn log_prob_standard_normal_at_origin() {
        assert_abs_diff_eq!(gaussian(&[0.0], &[0.0]).log_prob(&[0.0]), -0.918_938_53, epsilon = 1e-8);
        assert_abs_diff_eq!(gaussian(&[0.0, 0.0], &[0.0, 0.0]).log_prob(&[0.0, 0.0]), -1.837_877_07, epsilon = 1e-8);
    }

    #[test]
    fn kl_identity_and_unit_shift() {
        let p = gaussian(&[0.3, -1.0], &[0.2, -0.5]);
        assert_eq!(p.kl(&p), 0.0);
        let a = gaussian(&[0.0], &[0.0]);
        let b = gaussian(&[1.0], &[0.0]);
        assert_abs_diff_eq!(a.kl(&b), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn entropy_closed_form() {
        assert_abs_diff_eq!(gaussian(&[0.0], &[0.0]).entropy(), 1.418_938_53, epsilon = 1e-8);
        let base = gaussian(&[0.0, 0.0], &[0.1, -0.3]).entropy();
        let shifted = gaussian(&[0.0, 0.0], &[0.6, 0.2]).entropy();
        assert_abs_diff_eq!(shifted - base, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_log_std_samples_the_mean() {
        let d = gaussian(&[0.25, -0.75], &[-1e9, -1e9]);
        assert_eq!(d.log_std(), &[LOG_STD_MIN, LOG_STD_MIN]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = d.sample(&mut rng);
        assert_abs_diff_eq!(a[0], 0.25, epsilon = 1e-7);
        assert_abs_diff_eq!(a[1], -0.75, epsilon = 1e-7);
    }

    #[test]
    fn sampling_is_reproducible_from_seed() {
        let d = gaussian(&[0.1, 0.2, 0.3], &[0.0, -0.5, 0.5]);
        let a = d.sample(&mut ChaCha8Rng::seed_from_u64(11));
        let b = d.sample(&mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_network_outputs_bias_and_initial_log_std() {
        let mut cfg = NetConfig::new(5, 2);
        cfg.log_std_init = -0.5;
        let mut net = PolicyValueNet::<f64>::zeros(cfg);
        net.policy.layers.last_mut().unwrap().bias = Tensor::vector(vec![0.4, -0.2]);
        net.value.layers.last_mut().unwrap().bias = Tensor::vector(vec![1.5]);
        let d = net.policy_forward(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(d.mean(), &[0.4, -0.2]);
        assert_eq!(d.log_std(), &[-0.5, -0.5]);
        assert_eq!(net.value_forward(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 1.5);
    }

    #[test]
    fn wrong_observation_width_is_rejected() {
        let net = PolicyValueNet::<f64>::new(NetConfig::new(4, 2), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(net.policy_forward(&[0.0; 3]), Err(PolicyError::ObservationWidth { expected: 4, got: 3 })));
        assert!(net.value_forward(&[0.0; 5]).is_err());
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let obs = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(vars.policy_dist(&mut tape, obs, 4).is_err());
    }

    #[test]
    fn plain_and_recorded_forward_agree() {
        for sharing in [Sharing::Disjoint, Sharing::SharedTrunk] {
            let mut cfg = NetConfig::new(6, 3);
            cfg.sharing = sharing;
            let net = PolicyValueNet::<f64>::new(cfg, &mut ChaCha8Rng::seed_from_u64(42));
            let obs = Tensor::matrix(2, 6, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let o = tape.constant(obs.clone());
            let j = vars.joint(&mut tape, o, 6).unwrap();
            for r in 0..2 {
                let d = net.policy_forward(obs.row(r)).unwrap();
                assert_eq!(tape.value(j.mean).row(r), d.mean());
                assert_eq!(tape.value(j.value).data()[r], net.value_forward(obs.row(r)).unwrap());
            }
        }
    }

    #[test]
    fn shared_trunk_parameters_appear_once() {
        let mut cfg = NetConfig::new(4, 2);
        cfg.sharing = Sharing::SharedTrunk;
        cfg.hidden = vec![8, 8];
        let net = PolicyValueNet::<f64>::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));
        // trunk 4*8+8 + 8*8+8, policy head 8*2+2, log_std 2, value head 8+1
        assert_eq!(net.param_count(), 40 + 72 + 18 + 2 + 9);
        assert_eq!(net.layer_shapes(), vec![(4, 8), (8, 8), (8, 2), (8, 1)]);
    }

    #[test]
    fn graph_densities_match_plain_densities() {
        let net = PolicyValueNet::<f64>::new(NetConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(5));
        let obs = Tensor::matrix(3, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.0, 1.0, -1.0, 0.5]);
        let acts = Tensor::matrix(3, 2, vec![0.5, -0.5, 1.0, 0.0, -2.0, 0.3]);
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let o = tape.constant(obs.clone());
        let a = tape.constant(acts.clone());
        let p = vars.policy_dist(&mut tape, o, 3).unwrap();
        let lp = log_prob_graph(&mut tape, p.mean, p.log_std, a);
        let old_mean = tape.constant(Tensor::matrix(3, 2, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]));
        let old_ls = tape.constant(Tensor::matrix(3, 2, vec![-0.1, 0.2, 0.0, 0.0, 0.3, -0.3]));
        let kl = kl_graph(&mut tape, old_mean, old_ls, p.mean, p.log_std);
        for r in 0..3 {
            let d = net.policy_forward(obs.row(r)).unwrap();
            assert_abs_diff_eq!(tape.value(lp).data()[r], d.log_prob(acts.row(r)), epsilon = 1e-12);
            let old = gaussian(tape.value(old_mean).row(r), tape.value(old_ls).row(r));
            assert_abs_diff_eq!(tape.value(kl).data()[r], old.kl(&d), epsilon = 1e-12);
        }
    }

    #[test]
    fn kl_gradient_vanishes_at_old_parameters() {
        let net = PolicyValueNet::<f64>::new(NetConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(9));
        let obs = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64).cos()).collect());
        let old: Vec<_> = net.policy_batch(&obs).unwrap();
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let o = tape.constant(obs);
        let om = tape.constant(Tensor::matrix(4, 2, old.iter().flat_map(|d| d.mean().to_vec()).collect()));
        let ol = tape.constant(Tensor::matrix(4, 2, old.iter().flat_map(|d| d.log_std().to_vec()).collect()));
        let p = vars.policy_dist(&mut tape, o, 3).unwrap();
        let kl = kl_graph(&mut tape, om, ol, p.mean, p.log_std);
        let m = tape.mean(kl);
        let grads = tape.backward_wrt(m, &vars.policy_group()).unwrap();
        for g in grads {
            for &x in g.data() {
                assert!(x.abs() < 1e-10, "{x}");
            }
        }
    }
}
