//! Downstream metrics: importance-weighted test NLL and linear
//! classification of posterior means.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::dot;
use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::network::{check_input, decode, encode, GaussianLatent, Wiring};
use crate::model::objective::log_likelihood_vars;
use crate::model::network::{split_cols, DecodedVars};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Images encoded or decoded per graph during evaluation.
const CHUNK: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalMetrics {
    /// Nats per test image.
    pub nll: f64,
    pub accuracy: f64,
    pub n_importance_samples: usize,
    pub classifier_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllEstimate {
    pub mean: f64,
    /// Standard error of the mean over images.
    pub std_err: f64,
    pub per_image: Vec<f64>,
}

fn row_log_likelihood(x: &Tensor, recon: &Tensor, wiring: &Wiring) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let decoded = if recon.cols() == x.cols() {
        DecodedVars {
            mean: g.constant(recon.clone()),
            log_var: None,
        }
    } else {
        let (m, lv) = split_cols(recon, wiring.config.input_dim);
        DecodedVars {
            mean: g.constant(m),
            log_var: Some(g.constant(lv)),
        }
    };
    let ll = log_likelihood_vars(&mut g, xv, decoded)?;
    Ok(g.value(ll).data().to_vec())
}

/// `log p(x|z) + log p(z) − log q(z|x)` per row, with `z = μ + σ ⊙ eps`.
pub fn log_importance_weights(params: &ParamStore, wiring: &Wiring, x: &Tensor, eps: &Tensor) -> Result<Vec<f64>> {
    let (latent, _) = encode(params, wiring, x)?;
    weights_from_latent(params, wiring, x, &latent, eps)
}

fn weights_from_latent(
    params: &ParamStore,
    wiring: &Wiring,
    x: &Tensor,
    latent: &GaussianLatent,
    eps: &Tensor,
) -> Result<Vec<f64>> {
    let s = latent.dim();
    let ln2pi = (2.0 * PI).ln();
    let mut z = Vec::with_capacity(eps.len());
    let mut log_prior = Vec::with_capacity(x.rows());
    let mut log_q = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let (mu, lv, e) = (latent.mu.row(r), latent.log_var.row(r), eps.row(r));
        let (mut lp, mut lq) = (0.0, 0.0);
        for j in 0..s {
            let zj = mu[j] + (0.5 * lv[j]).exp() * e[j];
            z.push(zj);
            lp += -0.5 * (zj * zj + ln2pi);
            lq += -0.5 * (e[j] * e[j] + lv[j] + ln2pi);
        }
        log_prior.push(lp);
        log_q.push(lq);
    }
    let z = Tensor::new(vec![x.rows(), s], z)?;
    let (recon, _) = decode(params, wiring, &z)?;
    let ll = row_log_likelihood(x, &recon, wiring)?;
    Ok((0..x.rows()).map(|r| ll[r] + log_prior[r] - log_q[r]).collect())
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    m + (s / v.len() as f64).ln()
}

/// `−log (1/S) Σ_s p(x|z_s) p(z_s) / q(z_s|x)` per image, averaged.
pub fn estimate_nll(params: &ParamStore, wiring: &Wiring, data: &Tensor, samples: usize, seed: u64) -> Result<NllEstimate> {
    if samples == 0 {
        return Err(Error::Usage("importance sample count must be at least 1".into()));
    }
    check_input(wiring, data)?;
    let s = wiring.config.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_image = Vec::with_capacity(data.rows());
    let all: Vec<usize> = (0..data.rows()).collect();
    for chunk in all.chunks(CHUNK) {
        let x = data.select_rows(chunk);
        let (latent, _) = encode(params, wiring, &x)?;
        let mut logw = vec![Vec::with_capacity(samples); chunk.len()];
        for _ in 0..samples {
            let eps: Vec<f64> = (0..chunk.len() * s).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eps = Tensor::new(vec![chunk.len(), s], eps)?;
            let w = weights_from_latent(params, wiring, &x, &latent, &eps)?;
            for (r, v) in w.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite log-weight for image {}",
                        chunk[r]
                    )));
                }
                logw[r].push(v);
            }
        }
        per_image.extend(logw.iter().map(|w| -log_mean_exp(w)));
    }
    let n = per_image.len() as f64;
    let mean = per_image.iter().sum::<f64>() / n;
    let var = per_image.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(NllEstimate {
        mean,
        std_err: (var / n).sqrt(),
        per_image,
    })
}

/// Posterior means μ for every row, encoded in chunks.
pub fn latent_means(params: &ParamStore, wiring: &Wiring, data: &Tensor) -> Result<GaussianLatent> {
    let all: Vec<usize> = (0..data.rows()).collect();
    let (mut mu, mut lv) = (Vec::new(), Vec::new());
    for chunk in all.chunks(CHUNK) {
        let (lat, _) = encode(params, wiring, &data.select_rows(chunk))?;
        mu.extend_from_slice(lat.mu.data());
        lv.extend_from_slice(lat.log_var.data());
    }
    let s = wiring.config.latent_dim;
    GaussianLatent::new(
        Tensor::new(vec![data.rows(), s], mu)?,
        Tensor::new(vec![data.rows(), s], lv)?,
    )
}

/// One-vs-rest linear max-margin classifier trained by Pegasos-style
/// subgradient descent on the L2-regularized hinge loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    classes: Vec<u8>,
    /// One `[dim + 1]` row per class; the last entry multiplies a constant 1.
    weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-4,
            epochs: 20,
            seed: 0,
        }
    }
}

fn augmented(x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(1.0);
    v
}

impl LinearSvm {
    pub fn fit(features: &Tensor, labels: &[u8], cfg: SvmConfig) -> Result<Self> {
        if features.rows() != labels.len() || labels.is_empty() {
            return Err(Error::Usage("features and labels must be non-empty and aligned".into()));
        }
        if cfg.lambda <= 0.0 || cfg.epochs == 0 {
            return Err(Error::Usage("svm needs lambda > 0 and at least one epoch".into()));
        }
        let classes: Vec<u8> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let dim = features.cols() + 1;
        let rows: Vec<Vec<f64>> = (0..features.rows()).map(|r| augmented(features.row(r))).collect();
        let mut weights = vec![vec![0.0; dim]; classes.len()];
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut t = 0u64;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (cfg.lambda * t as f64);
                let shrink = 1.0 - eta * cfg.lambda;
                for (c, w) in classes.iter().zip(weights.iter_mut()) {
                    let y = if labels[i] == *c { 1.0 } else { -1.0 };
                    let margin = y * dot(w, &rows[i]);
                    for wk in w.iter_mut() {
                        *wk *= shrink;
                    }
                    if margin < 1.0 {
                        for (wk, xk) in w.iter_mut().zip(&rows[i]) {
                            *wk += eta * y * xk;
                        }
                    }
                }
            }
        }
        Ok(LinearSvm { classes, weights })
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn predict_row(&self, x: &[f64]) -> u8 {
        let a = augmented(x);
        let mut best = (f64::NEG_INFINITY, self.classes[0]);
        for (c, w) in self.classes.iter().zip(&self.weights) {
            let s = dot(w, &a);
            if s > best.0 {
                best = (s, *c);
            }
        }
        best.1
    }

    pub fn accuracy(&self, features: &Tensor, labels: &[u8]) -> f64 {
        let hits = (0..features.rows())
            .filter(|&r| self.predict_row(features.row(r)) == labels[r])
            .count();
        hits as f64 / labels.len() as f64
    }
}

/// Test accuracy of a linear classifier trained on latent codes.
pub fn latent_classify(
    train_latents: &Tensor,
    train_labels: &[u8],
    test_latents: &Tensor,
    test_labels: &[u8],
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let known: BTreeSet<u8> = train_labels.iter().copied().collect();
    if let Some(c) = test_labels.iter().find(|c| !known.contains(c)) {
        return Err(Error::Usage(format!("class {c} is absent from the training labels")));
    }
    if test_latents.rows() != test_labels.len() || test_labels.is_empty() {
        return Err(Error::Usage("test latents and labels must be non-empty and aligned".into()));
    }
    let svm = LinearSvm::fit(
        train_latents,
        train_labels,
        SvmConfig {
            epochs,
            seed,
            ..SvmConfig::default()
        },
    )?;
    Ok(svm.accuracy(test_latents, test_labels))
}

/// Header `label,mu_1,…,mu_s,logvar_1,…,logvar_s`.
pub fn latent_csv_header(s: usize) -> String {
    let mut h = String::from("label");
    for j in 1..=s {
        let _ = write!(h, ",mu_{j}");
    }
    for j in 1..=s {
        let _ = write!(h, ",logvar_{j}");
    }
    h
}

/// Writes one row per sample, in dataset order.
pub fn export_latents(params: &ParamStore, wiring: &Wiring, data: &Dataset, path: &Path) -> Result<()> {
    let lat = latent_means(params, wiring, &data.images)?;
    let s = lat.dim();
    let mut out = latent_csv_header(s);
    out.push('\n');
    for (r, label) in data.labels.iter().enumerate() {
        let _ = write!(out, "{label}");
        for v in lat.mu.row(r).iter().chain(lat.log_var.row(r)) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a latent CSV back into `(labels, latent)`.
pub fn read_latents(path: &Path) -> Result<(Vec<u8>, GaussianLatent)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty latent CSV".into()))?;
    let cols = header.split(',').count();
    if cols < 3 || (cols - 1) % 2 != 0 {
        return Err(Error::Format(format!("bad latent CSV header '{header}'")));
    }
    let s = (cols - 1) / 2;
    if header != latent_csv_header(s) {
        return Err(Error::Format(format!("bad latent CSV header '{header}'")));
    }
    let (mut labels, mut mu, mut lv) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let bad = || Error::Format(format!("malformed latent CSV row {}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols {
            return Err(bad());
        }
        labels.push(f[0].parse().map_err(|_| bad())?);
        for (k, v) in f[1..].iter().enumerate() {
            let v: f64 = v.parse().map_err(|_| bad())?;
            if k < s {
                mu.push(v);
            } else {
                lv.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Format("latent CSV has no rows".into()));
    }
    Ok((
        labels,
        GaussianLatent::new(Tensor::new(vec![n, s], mu)?, Tensor::new(vec![n, s], lv)?)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Tensor, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = (i % 2) as u8;
            let center = if c == 0 { -2.0 } else { 2.0 };
            data.push(center + rng.random_range(-0.5..0.5));
            data.push(-center + rng.random_range(-0.5..0.5));
            labels.push(c);
        }
        (Tensor::new(vec![n, 2], data).unwrap(), labels)
    }

    #[test]
    fn separable_clouds_are_classified_perfectly() {
        let (x, y) = blobs(200, 1);
        let (xt, yt) = blobs(100, 2);
        assert_eq!(latent_classify(&x, &y, &xt, &yt, 10, 0).unwrap(), 1.0);
    }

    #[test]
    fn random_labels_give_chance_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let x = Tensor::new(vec![n, 5], (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let xt = Tensor::new(vec![n, 5], (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let yt: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let acc = latent_classify(&x, &y, &xt, &yt, 5, 3).unwrap();
        assert!((acc - 0.1).abs() <= 0.03, "accuracy {acc}");
    }

    #[test]
    fn constant_features_predict_majority() {
        let n = 500;
        let x = Tensor::new(vec![n, 3], vec![0.25; n * 3]).unwrap();
        let y: Vec<u8> = (0..n).map(|i| if i % 5 < 3 { 7 } else { (i % 5) as u8 }).collect();
        let acc = latent_classify(&x, &y, &x, &y, 10, 0).unwrap();
        assert!((acc - 0.6).abs() < 1e-9, "accuracy {acc}");
    }

    #[test]
    fn unseen_test_class_is_rejected() {
        let (x, y) = blobs(20, 1);
        let r = latent_classify(&x, &y, &x, &[5; 20], 2, 0);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn classifier_is_deterministic() {
        let (x, y) = blobs(100, 9);
        let a = LinearSvm::fit(&x, &y, SvmConfig { seed: 4, ..SvmConfig::default() }).unwrap();
        let b = LinearSvm::fit(&x, &y, SvmConfig { seed: 4, ..SvmConfig::default() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn header_layout() {
        assert_eq!(latent_csv_header(2), "label,mu_1,mu_2,logvar_1,logvar_2");
    }

    #[test]
    fn log_mean_exp_is_stable() {
        assert!((log_mean_exp(&[-1000.0, -1000.0]) + 1000.0).abs() < 1e-12);
        assert!((log_mean_exp(&[0.0, 2f64.ln()]) - 1.5f64.ln()).abs() < 1e-12);
    }
}
