//! Deterministic fixtures shared by the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scvae::data::idx::encode_images;
use scvae::model::build_network;
use scvae::{NetworkConfig, ParamStore, SkipMode, Tensor, Wiring};

/// Uniform `[0, 1)` matrix.
pub fn uniform(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random()).collect()).unwrap()
}

/// Standard-normal-ish noise (sum of uniforms is fine for timing).
pub fn noise(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| (0..4).map(|_| rng.random::<f64>()).sum::<f64>() - 2.0)
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// A symmetric network with `depth` hidden layers per side.
pub fn network(input_dim: usize, depth: usize, width: usize, skip: SkipMode) -> (ParamStore, Wiring) {
    let cfg = NetworkConfig {
        input_dim,
        encoder_depth: depth,
        decoder_depth: depth,
        hidden_width: width,
        latent_dim: 16,
        encoder_skip: skip,
        decoder_skip: skip,
        ..NetworkConfig::default()
    };
    build_network(&cfg, 0).unwrap()
}

/// An in-memory IDX image file of `n` 28×28 images.
pub fn idx_images(n: usize) -> Vec<u8> {
    encode_images(&uniform(n, 784, 3), 28, 28).unwrap()
}
