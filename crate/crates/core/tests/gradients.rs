mod common;

use proptest::prelude::*;
use scvae::model::{build_network, forward};
use scvae::{Activation, NetworkConfig, SkipMode};

use common::{brute_force_sum_sq, finite_difference_error, jitter, normal, rng, small_config, uniform};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backprop_matches_central_differences(seed in 0u64..10_000, act in 0usize..4, skip in any::<bool>()) {
        let mut r = rng(seed);
        let cfg = small_config(&mut r, Activation::ALL[act], skip);
        let (mut params, wiring) = build_network(&cfg, seed).unwrap();
        jitter(&mut params, &mut r);
        let x = uniform(&mut r, 3, cfg.input_dim);
        let eps = normal(&mut r, 3, cfg.latent_dim);
        let err = finite_difference_error(&params, &wiring, &x, &eps);
        prop_assert!(err < 1e-4, "relative error {err} for {cfg:?}");
    }
}

#[test]
fn per_sample_trick_matches_one_backward_per_sample() {
    for (k, skip) in [SkipMode::None, SkipMode::EveryLayer].into_iter().enumerate() {
        let cfg = NetworkConfig {
            input_dim: 5,
            encoder_depth: 3,
            decoder_depth: 2,
            hidden_width: 4,
            latent_dim: 2,
            encoder_skip: skip,
            decoder_skip: skip,
            ..NetworkConfig::default()
        };
        let (params, wiring) = build_network(&cfg, 11 + k as u64).unwrap();
        let mut r = rng(3);
        let x = uniform(&mut r, 6, 5);
        let eps = normal(&mut r, 6, 2);
        let oracle = brute_force_sum_sq(&params, &wiring, &x, &eps);

        let mut pass = forward(&params, &wiring, &x, &eps).unwrap();
        pass.backward_sum(1.0).unwrap();
        for (l, expected) in params.layers().iter().zip(&oracle) {
            let tap = pass.taps.iter().find(|t| t.side == l.side && t.index == l.index).unwrap();
            let got = scvae::fisher::tap_statistics(&pass.graph, tap).sum_sq;
            let rel = (got - expected).abs() / expected.abs().max(1e-300);
            assert!(rel < 1e-10, "{}: {got} vs {expected}", l.label());
        }
    }
}
