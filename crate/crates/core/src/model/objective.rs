//! Evidence lower bound: reconstruction log-likelihood minus the closed-form
//! KL divergence to a standard normal prior.

use std::f64::consts::PI;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::config::Likelihood;
use crate::model::network::{
    check_input, decode_vars, encode_vars, reparameterize_vars, split_cols, AffineTap, BoundParams,
    DecodedVars, GaussianLatent, LatentVars, Wiring, LOG_VAR_MAX, LOG_VAR_MIN,
};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Batch means, in nats. `elbo == reconstruction - kl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub reconstruction: f64,
    pub kl: f64,
    pub elbo: f64,
}

/// Per-sample `[batch]` vectors on a graph.
#[derive(Debug, Clone, Copy)]
pub struct ElboVars {
    pub reconstruction: Var,
    pub kl: Var,
    pub neg_elbo: Var,
}

impl ElboVars {
    pub fn terms(&self, graph: &Graph) -> ElboTerms {
        let mean = |v: Var| {
            let t = graph.value(v);
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        let reconstruction = mean(self.reconstruction);
        let kl = mean(self.kl);
        ElboTerms {
            reconstruction,
            kl,
            elbo: reconstruction - kl,
        }
    }
}

/// `0.5 · Σ_j (μ_j² + σ_j² − log σ_j² − 1)` per row.
pub fn gaussian_kl_vars(graph: &mut Graph, latent: LatentVars) -> Result<Var> {
    let mu2 = graph.square(latent.mu)?;
    let var = graph.exp(latent.log_var)?;
    let a = graph.add(mu2, var)?;
    let b = graph.sub(a, latent.log_var)?;
    let c = graph.add_scalar(b, -1.0)?;
    let s = graph.sum_rows(c)?;
    graph.scale(s, 0.5)
}

/// Per-row `log p(x | z)` from decoder outputs.
pub fn log_likelihood_vars(graph: &mut Graph, x: Var, decoded: DecodedVars) -> Result<Var> {
    match decoded.log_var {
        None => {
            // x·l − softplus(l) = log σ(l)^x (1 − σ(l))^(1−x)
            let xl = graph.mul(x, decoded.mean)?;
            let sp = graph.softplus(decoded.mean)?;
            let ll = graph.sub(xl, sp)?;
            graph.sum_rows(ll)
        }
        Some(lv) => {
            let diff = graph.sub(x, decoded.mean)?;
            let sq = graph.square(diff)?;
            let neg = graph.scale(lv, -1.0)?;
            let prec = graph.exp(neg)?;
            let quad = graph.mul(sq, prec)?;
            let t = graph.add(quad, lv)?;
            let t = graph.add_scalar(t, (2.0 * PI).ln())?;
            let s = graph.sum_rows(t)?;
            graph.scale(s, -0.5)
        }
    }
}

pub fn elbo_vars(graph: &mut Graph, x: Var, decoded: DecodedVars, latent: LatentVars) -> Result<ElboVars> {
    let reconstruction = log_likelihood_vars(graph, x, decoded)?;
    let kl = gaussian_kl_vars(graph, latent)?;
    let neg_elbo = graph.sub(kl, reconstruction)?;
    Ok(ElboVars {
        reconstruction,
        kl,
        neg_elbo,
    })
}

/// ELBO of a batch given decoder outputs and posterior parameters.
///
/// `reconstruction` holds logits for Bernoulli, or the `[batch × 2d]`
/// concatenation of means and log variances for Gaussians.
pub fn elbo(x: &Tensor, reconstruction: &Tensor, latent: &GaussianLatent, likelihood: Likelihood) -> Result<ElboTerms> {
    if let Some(i) = x.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Input(format!(
            "pixel value {} at flat index {i} is outside [0, 1]",
            x.data()[i]
        )));
    }
    let d = x.cols();
    let expected = match likelihood {
        Likelihood::Bernoulli => d,
        Likelihood::DiagonalGaussian => 2 * d,
    };
    if reconstruction.rows() != x.rows() || reconstruction.cols() != expected || latent.batch() != x.rows() {
        return Err(Error::Shape {
            op: "elbo",
            left: x.shape().to_vec(),
            right: reconstruction.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let decoded = match likelihood {
        Likelihood::Bernoulli => DecodedVars {
            mean: g.constant(reconstruction.clone()),
            log_var: None,
        },
        Likelihood::DiagonalGaussian => {
            let (m, lv) = split_cols(reconstruction, d);
            let lv = g.constant(lv);
            DecodedVars {
                mean: g.constant(m),
                log_var: Some(g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX)?),
            }
        }
    };
    let lat = LatentVars {
        mu: g.constant(latent.mu.clone()),
        log_var: g.constant(latent.log_var.clone()),
    };
    Ok(elbo_vars(&mut g, xv, decoded, lat)?.terms(&g))
}

/// One taped pass `x → q(z|x) → z → p(x|z)` with the ELBO attached.
#[derive(Debug)]
pub struct ForwardPass {
    pub graph: Graph,
    pub bound: BoundParams,
    pub latent: LatentVars,
    pub z: Var,
    pub decoded: DecodedVars,
    pub encoder_trace: Vec<Var>,
    pub decoder_trace: Vec<Var>,
    /// Trainable affine maps in evaluation order.
    pub taps: Vec<AffineTap>,
    pub elbo: ElboVars,
}

/// Builds the full graph for a batch with injected standard-normal noise `eps`.
pub fn forward(params: &ParamStore, wiring: &Wiring, x: &Tensor, eps: &Tensor) -> Result<ForwardPass> {
    check_input(wiring, x)?;
    let s = wiring.config.latent_dim;
    if eps.shape() != [x.rows(), s] {
        return Err(Error::Shape {
            op: "noise",
            left: eps.shape().to_vec(),
            right: vec![x.rows(), s],
        });
    }
    let mut graph = Graph::new();
    let bound = BoundParams::bind(&mut graph, params);
    let xv = graph.constant(x.clone());
    let ev = graph.constant(eps.clone());
    let mut taps = Vec::new();
    let (latent, encoder_trace) = encode_vars(&mut graph, &bound, wiring, xv, &mut taps)?;
    let z = reparameterize_vars(&mut graph, latent, ev)?;
    let (decoded, decoder_trace) = decode_vars(&mut graph, &bound, wiring, z, &mut taps)?;
    let elbo = elbo_vars(&mut graph, xv, decoded, latent)?;
    Ok(ForwardPass {
        graph,
        bound,
        latent,
        z,
        decoded,
        encoder_trace,
        decoder_trace,
        taps,
        elbo,
    })
}

impl ForwardPass {
    pub fn terms(&self) -> ElboTerms {
        self.elbo.terms(&self.graph)
    }

    /// Per-sample negative ELBO values.
    pub fn per_sample_loss(&self) -> &[f64] {
        self.graph.value(self.elbo.neg_elbo).data()
    }

    /// Backpropagates `scale · Σ_i (−elbo_i)`; rows of every tap's
    /// pre-activation gradient are then exact per-sample gradients.
    pub fn backward_sum(&mut self, scale: f64) -> Result<f64> {
        let scaled = self.graph.scale(self.elbo.neg_elbo, scale)?;
        let loss = self.graph.sum(scaled)?;
        self.graph.backward(loss)?;
        Ok(self.graph.value(loss).item())
    }

    /// Backpropagates the batch-mean negative ELBO and stores the gradients
    /// on `params`. Returns the loss.
    pub fn backward_mean(&mut self, params: &mut ParamStore) -> Result<f64> {
        let loss = self.graph.mean(self.elbo.neg_elbo)?;
        let value = self.graph.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {value}")));
        }
        self.graph.backward(loss)?;
        self.bound.write_grads(&self.graph, params)?;
        Ok(value)
    }
}
