//! Synthetic class-conditional product-Bernoulli images.
//!
//! Each class owns a template `t ∈ [0.1, 0.9]^d`; a sample of that class has
//! independent pixels `x_j ~ Bernoulli(t_j)`. Validation and test sets hold
//! one fifth as many samples per class as the training set.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthParams {
    pub seed: u64,
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            n_per_class: 250,
            n_classes: 4,
            dim: 64,
        }
    }
}

fn sample_set<R: Rng>(templates: &[Vec<f64>], per_class: usize, rng: &mut R) -> Result<Dataset> {
    let d = templates[0].len();
    let mut order: Vec<u8> = (0..templates.len())
        .flat_map(|c| std::iter::repeat_n(c as u8, per_class))
        .collect();
    order.shuffle(rng);
    let mut data = Vec::with_capacity(order.len() * d);
    for &c in &order {
        for &p in &templates[c as usize] {
            data.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        }
    }
    Dataset::new(Tensor::new(vec![order.len(), d], data)?, order)
}

pub fn synth_dataset(params: SynthParams) -> Result<DatasetSplit> {
    let SynthParams {
        seed,
        n_per_class,
        n_classes,
        dim,
    } = params;
    if !(1..=10).contains(&n_classes) {
        return Err(Error::Config(format!("synthetic n_classes must be in 1..=10, got {n_classes}")));
    }
    if dim < 2 {
        return Err(Error::Config(format!("synthetic dimension must be >= 2, got {dim}")));
    }
    if n_per_class == 0 {
        return Err(Error::Config("synthetic n_per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(0.1..=0.9)).collect())
        .collect();
    let holdout = (n_per_class / 5).max(1);
    Ok(DatasetSplit {
        train: sample_set(&templates, n_per_class, &mut rng)?,
        val: sample_set(&templates, holdout, &mut rng)?,
        test: sample_set(&templates, holdout, &mut rng)?,
    })
}
