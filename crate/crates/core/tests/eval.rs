mod common;

use scvae::data::{synth_dataset, SynthParams};
use scvae::eval::{
    estimate_nll, export_latents, latent_classify, latent_means, log_importance_weights, read_latents,
};
use scvae::model::{build_network, forward};
use scvae::NetworkConfig;

use common::{normal, rng, uniform};

fn net(seed: u64) -> (scvae::ParamStore, scvae::Wiring) {
    let cfg = NetworkConfig {
        input_dim: 16,
        encoder_depth: 2,
        decoder_depth: 2,
        hidden_width: 12,
        latent_dim: 3,
        ..NetworkConfig::default()
    };
    build_network(&cfg, seed).unwrap()
}

#[test]
fn single_sample_weight_is_the_sampled_bound() {
    let (params, wiring) = net(1);
    let mut r = rng(1);
    let x = uniform(&mut r, 7, 16);
    let eps = normal(&mut r, 7, 3);
    let w = log_importance_weights(&params, &wiring, &x, &eps).unwrap();
    // Single-sample bound with a sampled KL: log p(x|z) + log p(z) − log q(z|x).
    let pass = forward(&params, &wiring, &x, &eps).unwrap();
    let recon = pass.graph.value(pass.elbo.reconstruction).data();
    let z = pass.graph.value(pass.z);
    let lv = pass.graph.value(pass.latent.log_var);
    for n in 0..7 {
        let mut bound = recon[n];
        for j in 0..3 {
            let (zj, e, v) = (z.row(n)[j], eps.row(n)[j], lv.row(n)[j]);
            bound += -0.5 * zj * zj + 0.5 * (e * e + v);
        }
        assert!((w[n] - bound).abs() <= 1e-9 * bound.abs(), "{} vs {bound}", w[n]);
    }
}

#[test]
fn more_importance_samples_never_loosen_the_bound() {
    let (params, wiring) = net(2);
    for seed in 0..5 {
        let x = uniform(&mut rng(100 + seed), 60, 16);
        let one = estimate_nll(&params, &wiring, &x, 1, seed).unwrap();
        let many = estimate_nll(&params, &wiring, &x, 100, seed).unwrap();
        assert!(many.mean <= one.mean + 2.0 * one.std_err, "seed {seed}: {} vs {}", many.mean, one.mean);
    }
}

#[test]
fn zero_samples_is_a_usage_error() {
    let (params, wiring) = net(2);
    assert!(estimate_nll(&params, &wiring, &uniform(&mut rng(0), 2, 16), 0, 0).is_err());
}

#[test]
fn export_shape_determinism_and_reimport() {
    let split = synth_dataset(SynthParams { seed: 3, n_per_class: 40, n_classes: 4, dim: 16 }).unwrap();
    let cfg = NetworkConfig { input_dim: 16, hidden_width: 8, latent_dim: 2, ..NetworkConfig::default() };
    let (params, wiring) = build_network(&cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let three = split.test.head(3);
    let small = dir.path().join("three.csv");
    export_latents(&params, &wiring, &three, &small).unwrap();
    let text = std::fs::read_to_string(&small).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "label,mu_1,mu_2,logvar_1,logvar_2");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    export_latents(&params, &wiring, &split.test, &a).unwrap();
    export_latents(&params, &wiring, &split.test, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let train_mu = latent_means(&params, &wiring, &split.train.images).unwrap().mu;
    let test_mu = latent_means(&params, &wiring, &split.test.images).unwrap().mu;
    let direct = latent_classify(&train_mu, &split.train.labels, &test_mu, &split.test.labels, 5, 1).unwrap();
    let (labels, reread) = read_latents(&a).unwrap();
    assert_eq!(labels, split.test.labels);
    let again = latent_classify(&train_mu, &split.train.labels, &reread.mu, &labels, 5, 1).unwrap();
    assert_eq!(direct, again);
}

#[test]
fn linear_classifier_separates_synthetic_pixels() {
    let split = synth_dataset(SynthParams::default()).unwrap();
    let acc = latent_classify(
        &split.train.images,
        &split.train.labels,
        &split.test.images,
        &split.test.labels,
        20,
        0,
    )
    .unwrap();
    assert!(acc > 0.9, "accuracy {acc}");
}
