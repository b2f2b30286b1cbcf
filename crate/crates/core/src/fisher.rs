//! Layer-wise empirical Fisher Information.
//!
//! For layer `l` with parameters `φ_l`, the probe reports
//!
//! ```text
//! fisher(l) = 1/|φ_l| · Σ_i∈φ_l  mean_n [ (∂(−elbo_n)/∂φ_i)² ]
//! ```
//!
//! using exact per-sample gradients. Every trainable weight of a dense layer
//! is used once per sample, so the per-sample weight gradient is the outer
//! product `δ_n ⊗ x_n` of the pre-activation gradient row and the layer
//! input row; its squared norm is `‖δ_n‖² · ‖x_n‖²`. One batched backward
//! pass over `Σ_n (−elbo_n)` therefore yields every per-sample square.

use std::fmt::Write as _;

use log::warn;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::network::{AffineTap, Wiring};
use crate::model::objective::forward;
use crate::params::{ParamStore, Side};
use crate::tensor::Tensor;

/// Smallest probe batch accepted by [`layer_fisher`].
pub const MIN_PROBE_BATCH: usize = 32;

pub const CSV_HEADER: &str = "run_id,epoch,side,layer,fisher,grad_sq_norm,param_count";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFisher {
    pub side: Side,
    pub layer: u32,
    pub fisher: f64,
    /// Squared L2 norm of the batch-mean gradient of this layer.
    pub grad_sq_norm: f64,
    pub param_count: usize,
    /// Set when every gradient of the layer was exactly zero.
    pub zero_gradient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherReport {
    pub run_id: String,
    pub epoch: usize,
    pub layers: Vec<LayerFisher>,
    /// Parameter-count weighted mean over encoder and latent-head layers.
    pub encoder_mean: f64,
    /// Parameter-count weighted mean over decoder layers.
    pub decoder_mean: f64,
    pub overall_mean: f64,
}

fn weighted_mean<'a>(layers: impl Iterator<Item = &'a LayerFisher>) -> f64 {
    let (num, den) = layers.fold((0.0, 0usize), |(n, d), l| {
        (n + l.fisher * l.param_count as f64, d + l.param_count)
    });
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

pub fn is_encoder_side(side: Side) -> bool {
    matches!(side, Side::Encoder | Side::LatentHead)
}

impl FisherReport {
    pub fn from_layers(run_id: impl Into<String>, epoch: usize, layers: Vec<LayerFisher>) -> Self {
        let encoder_mean = weighted_mean(layers.iter().filter(|l| is_encoder_side(l.side)));
        let decoder_mean = weighted_mean(layers.iter().filter(|l| l.side == Side::Decoder));
        let overall_mean = weighted_mean(layers.iter());
        FisherReport {
            run_id: run_id.into(),
            epoch,
            layers,
            encoder_mean,
            decoder_mean,
            overall_mean,
        }
    }

    pub fn get(&self, side: Side, layer: u32) -> Option<&LayerFisher> {
        self.layers.iter().find(|l| l.side == side && l.layer == layer)
    }

    pub fn side(&self, side: Side) -> impl Iterator<Item = &LayerFisher> {
        self.layers.iter().filter(move |l| l.side == side)
    }

    /// CSV rows (no header) in layer storage order.
    pub fn to_csv_rows(&self) -> String {
        let mut s = String::new();
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.run_id, self.epoch, l.side, l.layer, l.fisher, l.grad_sq_norm, l.param_count
            );
        }
        s
    }
}

/// Renders reports as a complete CSV document.
pub fn to_csv(reports: &[FisherReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.to_csv_rows());
    }
    s
}

/// Parses a CSV produced by [`to_csv`], grouping consecutive rows by epoch.
pub fn parse_csv(text: &str) -> Result<Vec<FisherReport>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("missing fisher CSV header".into()));
    }
    let mut reports: Vec<(String, usize, Vec<LayerFisher>)> = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("malformed fisher CSV row {}", n + 2));
        if f.len() != 7 {
            return Err(bad());
        }
        let epoch: usize = f[1].parse().map_err(|_| bad())?;
        let layer = LayerFisher {
            side: Side::parse(f[2])?,
            layer: f[3].parse().map_err(|_| bad())?,
            fisher: f[4].parse().map_err(|_| bad())?,
            grad_sq_norm: f[5].parse().map_err(|_| bad())?,
            param_count: f[6].parse().map_err(|_| bad())?,
            zero_gradient: false,
        };
        let layer = LayerFisher {
            zero_gradient: layer.fisher == 0.0,
            ..layer
        };
        match reports.last_mut() {
            Some((id, e, layers)) if *id == f[0] && *e == epoch => layers.push(layer),
            _ => reports.push((f[0].to_string(), epoch, vec![layer])),
        }
    }
    Ok(reports
        .into_iter()
        .map(|(id, e, layers)| FisherReport::from_layers(id, e, layers))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOptions {
    pub run_id: String,
    pub epoch: usize,
    /// Constant multiplying every per-sample loss.
    pub loss_scale: f64,
    pub min_batch: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            run_id: String::new(),
            epoch: 0,
            loss_scale: 1.0,
            min_batch: MIN_PROBE_BATCH,
        }
    }
}

/// Per-sample gradient statistics of one affine map after a backward pass
/// over a loss that is a plain sum of per-sample terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapStatistics {
    /// `Σ_n ‖g_n‖²` over the trainable parameters of the map.
    pub sum_sq: f64,
    /// `‖(1/B) Σ_n g_n‖²`.
    pub mean_grad_sq_norm: f64,
    pub param_count: usize,
    pub batch: usize,
}

impl TapStatistics {
    /// Mean over parameters and samples of the squared per-sample gradient.
    pub fn fisher(&self) -> f64 {
        if self.param_count == 0 {
            0.0
        } else {
            self.sum_sq / (self.param_count as f64 * self.batch as f64)
        }
    }
}

pub fn tap_statistics(graph: &Graph, tap: &AffineTap) -> TapStatistics {
    let x = graph.value(tap.input);
    let (batch, n_in) = (x.rows(), x.cols());
    let n_out = graph.value(tap.pre).cols();
    let with_w = graph.requires_grad(tap.weight);
    let with_b = graph.requires_grad(tap.bias);
    let param_count = usize::from(with_w) * n_in * n_out + usize::from(with_b) * n_out;

    let mut sum_sq = 0.0;
    if let Some(delta) = graph.grad(tap.pre) {
        for n in 0..batch {
            let dn = &delta[n * n_out..(n + 1) * n_out];
            let d2: f64 = dn.iter().map(|v| v * v).sum();
            let mut factor = 0.0;
            if with_w {
                factor += x.row(n).iter().map(|v| v * v).sum::<f64>();
            }
            if with_b {
                factor += 1.0;
            }
            sum_sq += d2 * factor;
        }
    }
    let b = batch as f64;
    let sq = |g: Option<&[f64]>| g.map_or(0.0, |g| g.iter().map(|v| (v / b) * (v / b)).sum::<f64>());
    let mean_grad_sq_norm = if with_w { sq(graph.grad(tap.weight)) } else { 0.0 }
        + if with_b { sq(graph.grad(tap.bias)) } else { 0.0 };
    TapStatistics {
        sum_sq,
        mean_grad_sq_norm,
        param_count,
        batch,
    }
}

/// Per-layer Fisher Information of the negative ELBO on a fixed probe batch.
pub fn layer_fisher(params: &ParamStore, wiring: &Wiring, batch: &Tensor, eps: &Tensor) -> Result<FisherReport> {
    layer_fisher_with(params, wiring, batch, eps, &ProbeOptions::default())
}

pub fn layer_fisher_with(
    params: &ParamStore,
    wiring: &Wiring,
    batch: &Tensor,
    eps: &Tensor,
    opts: &ProbeOptions,
) -> Result<FisherReport> {
    if batch.rows() < opts.min_batch {
        return Err(Error::Usage(format!(
            "probe batch of {} samples is below the minimum of {}",
            batch.rows(),
            opts.min_batch
        )));
    }
    let mut pass = forward(params, wiring, batch, eps)?;
    let loss = pass.backward_sum(opts.loss_scale)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite probe loss {loss}")));
    }
    let mut layers = Vec::with_capacity(pass.taps.len());
    for l in params.layers() {
        let tap = pass
            .taps
            .iter()
            .find(|t| t.side == l.side && t.index == l.index)
            .ok_or_else(|| Error::Config(format!("{} was not evaluated", l.label())))?;
        let st = tap_statistics(&pass.graph, tap);
        let fisher = st.fisher();
        let zero_gradient = fisher == 0.0;
        if zero_gradient {
            warn!("{}: all gradients are zero, reporting fisher = 0", l.label());
        }
        layers.push(LayerFisher {
            side: l.side,
            layer: l.index,
            fisher,
            grad_sq_norm: st.mean_grad_sq_norm,
            param_count: st.param_count,
            zero_gradient,
        });
    }
    Ok(FisherReport::from_layers(opts.run_id.clone(), opts.epoch, layers))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioPair {
    pub side: Side,
    pub from: u32,
    pub to: u32,
    /// `fisher(to) / fisher(from)`.
    pub measured: f64,
    /// `(rms_grad(to) / rms_grad(from))²` with `rms_grad² = grad_sq_norm / param_count`.
    pub predicted: f64,
    /// `(‖∇φ_from‖ / ‖∇φ_to‖)²`, the layer-norm ratio read as a scalar recurrence.
    pub as_written: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceDiagnostic {
    pub pairs: Vec<RatioPair>,
    /// Adjacent pairs whose denominator vanished: `(side, from, to)`.
    pub skipped: Vec<(Side, u32, u32)>,
    /// Fraction of adjacent pairs with `fisher(l+1) <= fisher(l)`.
    pub decay_rate: f64,
}

/// Compares measured layer-to-layer Fisher ratios with the ratios implied by
/// the gradient norms recorded in the same report.
///
/// Adjacent pairs are taken within the encoder and within the decoder, in
/// increasing layer order.
pub fn recurrence_check(report: &FisherReport) -> RecurrenceDiagnostic {
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    let (mut decays, mut total) = (0usize, 0usize);
    for side in [Side::Encoder, Side::Decoder] {
        let mut chain: Vec<&LayerFisher> = report.side(side).collect();
        chain.sort_by_key(|l| l.layer);
        for w in chain.windows(2) {
            let (a, b) = (w[0], w[1]);
            total += 1;
            if b.fisher <= a.fisher {
                decays += 1;
            }
            if a.fisher == 0.0 || a.grad_sq_norm == 0.0 || b.grad_sq_norm == 0.0 {
                skipped.push((side, a.layer, b.layer));
                continue;
            }
            let measured = b.fisher / a.fisher;
            let rms = |l: &LayerFisher| l.grad_sq_norm / l.param_count as f64;
            let predicted = rms(b) / rms(a);
            let as_written = a.grad_sq_norm / b.grad_sq_norm;
            pairs.push(RatioPair {
                side,
                from: a.layer,
                to: b.layer,
                measured,
                predicted,
                as_written,
                discrepancy: (measured - predicted).abs() / predicted.abs(),
            });
        }
    }
    RecurrenceDiagnostic {
        pairs,
        skipped,
        decay_rate: if total == 0 { 0.0 } else { decays as f64 / total as f64 },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub side: Side,
    pub layer: u32,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGain {
    pub rows: Vec<GainRow>,
    pub encoder_gain: f64,
    pub decoder_gain: f64,
    pub overall_gain: f64,
}

/// `fisher_skip(l) − fisher_plain(l)` for two architecturally aligned runs.
pub fn skip_gain(with_skip: &FisherReport, plain: &FisherReport) -> Result<SkipGain> {
    let aligned = with_skip.layers.len() == plain.layers.len()
        && with_skip
            .layers
            .iter()
            .zip(&plain.layers)
            .all(|(a, b)| a.side == b.side && a.layer == b.layer && a.param_count == b.param_count);
    if !aligned {
        return Err(Error::Usage(
            "skip_gain needs reports over identical layer sets".into(),
        ));
    }
    let rows = with_skip
        .layers
        .iter()
        .zip(&plain.layers)
        .map(|(a, b)| GainRow {
            side: a.side,
            layer: a.layer,
            gain: a.fisher - b.fisher,
        })
        .collect();
    Ok(SkipGain {
        rows,
        encoder_gain: with_skip.encoder_mean - plain.encoder_mean,
        decoder_gain: with_skip.decoder_mean - plain.decoder_mean,
        overall_gain: with_skip.overall_mean - plain.overall_mean,
    })
}
