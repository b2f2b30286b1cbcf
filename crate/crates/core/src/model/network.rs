//! Encoder/decoder stacks with optional additive shortcuts.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Activation, Graph, Var};
use crate::error::{Error, Result};
use crate::model::config::{Likelihood, NetworkConfig, SkipMode};
use crate::params::{LayerParams, ParamStore, Side};
use crate::tensor::Tensor;

/// Lower bound of the clamped posterior (and Gaussian decoder) log variance.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Shortcut adding `g(h_from)` to the post-activation output of layer `to`.
///
/// `g` is the identity when the widths agree, otherwise a frozen linear
/// projection of shape `[width(to) × width(from)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipEdge {
    pub from: usize,
    pub to: usize,
    pub projection: Option<Tensor>,
}

/// Executable plan for one stack of hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StackPlan {
    pub side: Side,
    /// `widths[0]` is the stack input, `widths[l]` the width of hidden layer `l`.
    pub widths: Vec<usize>,
    pub skips: Vec<SkipEdge>,
    pub activation: Activation,
}

impl StackPlan {
    pub fn new<R: Rng + ?Sized>(
        side: Side,
        widths: Vec<usize>,
        mode: SkipMode,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let depth = widths.len().saturating_sub(1);
        if depth == 0 || widths.contains(&0) {
            return Err(Error::Config(format!("{side} stack needs positive widths")));
        }
        let pairs: Vec<(usize, usize)> = match mode {
            SkipMode::None => Vec::new(),
            SkipMode::EveryLayer => (2..=depth).map(|l| (l - 1, l)).collect(),
            SkipMode::Long { from, to } => {
                if !(0 < from && from < to && to <= depth && to - from >= 2) {
                    return Err(Error::Config(format!(
                        "{side} long skip ({from},{to}) out of range for depth {depth}"
                    )));
                }
                vec![(from, to)]
            }
        };
        let skips = pairs
            .into_iter()
            .map(|(from, to)| {
                let (wf, wt) = (widths[from], widths[to]);
                let projection = (wf != wt).then(|| frozen_projection(wf, wt, rng));
                SkipEdge { from, to, projection }
            })
            .collect();
        Ok(StackPlan {
            side,
            widths,
            skips,
            activation,
        })
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }
}

fn frozen_projection<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Tensor {
    let limit = (3.0 / n_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    let data = (0..n_in * n_out).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![n_out, n_in], data).expect("positive dims")
}

/// Full executable wiring: configuration plus both stack plans.
#[derive(Debug, Clone, PartialEq)]
pub struct Wiring {
    pub config: NetworkConfig,
    pub encoder: StackPlan,
    pub decoder: StackPlan,
}

impl Wiring {
    pub fn skip_edges(&self, side: Side) -> &[SkipEdge] {
        match side {
            Side::Encoder => &self.encoder.skips,
            Side::Decoder => &self.decoder.skips,
            Side::LatentHead => &[],
        }
    }

    /// Width of the decoder output: one value per pixel, two for Gaussians.
    pub fn reconstruction_width(&self) -> usize {
        match self.config.likelihood {
            Likelihood::Bernoulli => self.config.input_dim,
            Likelihood::DiagonalGaussian => 2 * self.config.input_dim,
        }
    }
}

/// Initializes parameters and the wiring plan deterministically from `seed`.
///
/// Storage order is encoder hidden layers, the μ head (latent-head 1), the
/// log σ² head (latent-head 2), decoder hidden layers and finally the decoder
/// output head(s) (decoder `L_dec + 1`, plus `L_dec + 2` for the Gaussian
/// log variance).
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<(ParamStore, Wiring)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let NetworkConfig {
        input_dim: d,
        encoder_depth: le,
        decoder_depth: ld,
        hidden_width: w,
        latent_dim: s,
        ..
    } = *config;

    let mut layers = Vec::new();
    for l in 1..=le {
        let n_in = if l == 1 { d } else { w };
        layers.push(LayerParams::init(Side::Encoder, l as u32, n_in, w, &mut rng));
    }
    layers.push(LayerParams::init(Side::LatentHead, 1, w, s, &mut rng));
    layers.push(LayerParams::init(Side::LatentHead, 2, w, s, &mut rng));
    for l in 1..=ld {
        let n_in = if l == 1 { s } else { w };
        layers.push(LayerParams::init(Side::Decoder, l as u32, n_in, w, &mut rng));
    }
    layers.push(LayerParams::init(Side::Decoder, ld as u32 + 1, w, d, &mut rng));
    if config.likelihood == Likelihood::DiagonalGaussian {
        layers.push(LayerParams::init(Side::Decoder, ld as u32 + 2, w, d, &mut rng));
    }
    let params = ParamStore::new(layers)?;

    let mut enc_widths = vec![d];
    enc_widths.extend(std::iter::repeat_n(w, le));
    let mut dec_widths = vec![s];
    dec_widths.extend(std::iter::repeat_n(w, ld));
    let encoder = StackPlan::new(Side::Encoder, enc_widths, config.encoder_skip, config.activation, &mut rng)?;
    let decoder = StackPlan::new(Side::Decoder, dec_widths, config.decoder_skip, config.activation, &mut rng)?;
    Ok((
        params,
        Wiring {
            config: config.clone(),
            encoder,
            decoder,
        },
    ))
}

/// Parameters registered as trainable leaves of one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    order: Vec<(Side, u32)>,
    vars: HashMap<(Side, u32), (Var, Var)>,
}

impl BoundParams {
    pub fn bind(graph: &mut Graph, params: &ParamStore) -> Self {
        let mut order = Vec::with_capacity(params.layers().len());
        let mut vars = HashMap::with_capacity(params.layers().len());
        for l in params.layers() {
            let mut w = l.weight.clone();
            let mut b = l.bias.clone();
            w.clear_grad();
            b.clear_grad();
            let wv = graph.param(w);
            let bv = graph.param(b);
            order.push((l.side, l.index));
            vars.insert((l.side, l.index), (wv, bv));
        }
        BoundParams { order, vars }
    }

    pub fn get(&self, side: Side, index: u32) -> Result<(Var, Var)> {
        self.vars
            .get(&(side, index))
            .copied()
            .ok_or_else(|| Error::Config(format!("no parameters for {side} layer {index}")))
    }

    /// Copies gradients from the graph into the parameter store's grad slots.
    pub fn write_grads(&self, graph: &Graph, params: &mut ParamStore) -> Result<()> {
        for (l, key) in params.layers_mut().iter_mut().zip(&self.order) {
            let (wv, bv) = self.vars[key];
            let gw = graph
                .grad(wv)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; l.weight.len()]);
            let gb = graph
                .grad(bv)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; l.bias.len()]);
            l.weight.set_grad(gw)?;
            l.bias.set_grad(gb)?;
        }
        Ok(())
    }
}

/// Record of one trainable affine map, used for per-sample gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineTap {
    pub side: Side,
    pub index: u32,
    pub input: Var,
    /// Pre-activation output.
    pub pre: Var,
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub log_var: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DecodedVars {
    /// Logits (Bernoulli) or means (Gaussian).
    pub mean: Var,
    pub log_var: Option<Var>,
}

fn tap_affine(
    graph: &mut Graph,
    bound: &BoundParams,
    side: Side,
    index: u32,
    input: Var,
    taps: &mut Vec<AffineTap>,
) -> Result<Var> {
    let (weight, bias) = bound.get(side, index)?;
    let pre = graph.affine(input, weight, bias).map_err(|e| at_layer(e, side, index))?;
    taps.push(AffineTap {
        side,
        index,
        input,
        pre,
        weight,
        bias,
    });
    Ok(pre)
}

fn at_layer(e: Error, side: Side, index: u32) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{side} layer {index}: {m}")),
        other => other,
    }
}

/// Runs a stack of hidden layers; returns `h_1 … h_L`.
pub fn run_stack(
    graph: &mut Graph,
    bound: &BoundParams,
    plan: &StackPlan,
    input: Var,
    taps: &mut Vec<AffineTap>,
) -> Result<Vec<Var>> {
    let mut h = vec![input];
    for l in 1..=plan.depth() {
        let pre = tap_affine(graph, bound, plan.side, l as u32, h[l - 1], taps)?;
        let mut out = graph
            .activation(plan.activation, pre)
            .map_err(|e| at_layer(e, plan.side, l as u32))?;
        for edge in plan.skips.iter().filter(|e| e.to == l) {
            let src = h[edge.from];
            let shortcut = match &edge.projection {
                None => src,
                Some(p) => {
                    let pw = graph.constant(p.clone());
                    let pb = graph.constant(Tensor::zeros(&[p.rows()]));
                    graph.affine(src, pw, pb)?
                }
            };
            out = graph.add(out, shortcut)?;
        }
        if !graph.value(out).is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite activation in {} layer {l}",
                plan.side
            )));
        }
        h.push(out);
    }
    h.remove(0);
    Ok(h)
}

fn check_unit_interval(x: &Tensor, what: &str) -> Result<()> {
    match x.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        None => Ok(()),
        Some(i) => Err(Error::Input(format!(
            "{what} value {} at flat index {i} is outside [0, 1]",
            x.data()[i]
        ))),
    }
}

pub(crate) fn check_input(wiring: &Wiring, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != wiring.config.input_dim {
        return Err(Error::Shape {
            op: "input",
            left: x.shape().to_vec(),
            right: vec![wiring.config.input_dim],
        });
    }
    check_unit_interval(x, "pixel")
}

pub fn encode_vars(
    graph: &mut Graph,
    bound: &BoundParams,
    wiring: &Wiring,
    x: Var,
    taps: &mut Vec<AffineTap>,
) -> Result<(LatentVars, Vec<Var>)> {
    let trace = run_stack(graph, bound, &wiring.encoder, x, taps)?;
    let top = *trace.last().expect("depth >= 1");
    let mu = tap_affine(graph, bound, Side::LatentHead, 1, top, taps)?;
    let raw = tap_affine(graph, bound, Side::LatentHead, 2, top, taps)?;
    let log_var = graph.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX)?;
    Ok((LatentVars { mu, log_var }, trace))
}

/// `z = μ + exp(½ log σ²) ⊙ ε`
pub fn reparameterize_vars(graph: &mut Graph, latent: LatentVars, eps: Var) -> Result<Var> {
    let half = graph.scale(latent.log_var, 0.5)?;
    let sigma = graph.exp(half)?;
    let noise = graph.mul(sigma, eps)?;
    graph.add(latent.mu, noise)
}

pub fn decode_vars(
    graph: &mut Graph,
    bound: &BoundParams,
    wiring: &Wiring,
    z: Var,
    taps: &mut Vec<AffineTap>,
) -> Result<(DecodedVars, Vec<Var>)> {
    let trace = run_stack(graph, bound, &wiring.decoder, z, taps)?;
    let top = *trace.last().expect("depth >= 1");
    let head = wiring.decoder.depth() as u32 + 1;
    let mean = tap_affine(graph, bound, Side::Decoder, head, top, taps)?;
    let log_var = match wiring.config.likelihood {
        Likelihood::Bernoulli => None,
        Likelihood::DiagonalGaussian => {
            let raw = tap_affine(graph, bound, Side::Decoder, head + 1, top, taps)?;
            Some(graph.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX)?)
        }
    };
    Ok((DecodedVars { mean, log_var }, trace))
}

/// Posterior parameters of `q(z|x)` for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl GaussianLatent {
    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(Error::Shape {
                op: "latent",
                left: mu.shape().to_vec(),
                right: log_var.shape().to_vec(),
            });
        }
        let data = log_var
            .data()
            .iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        let log_var = Tensor::new(log_var.shape().to_vec(), data)?;
        Ok(GaussianLatent { mu, log_var })
    }

    pub fn batch(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }
}

/// Posterior parameters and hidden activations `h_1 … h_L` for a batch in `[0, 1]`.
pub fn encode(params: &ParamStore, wiring: &Wiring, x: &Tensor) -> Result<(GaussianLatent, Vec<Tensor>)> {
    check_input(wiring, x)?;
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params);
    let xv = g.constant(x.clone());
    let (latent, trace) = encode_vars(&mut g, &bound, wiring, xv, &mut Vec::new())?;
    Ok((
        GaussianLatent {
            mu: g.value(latent.mu).clone(),
            log_var: g.value(latent.log_var).clone(),
        },
        trace.into_iter().map(|v| g.value(v).clone()).collect(),
    ))
}

pub fn reparameterize(latent: &GaussianLatent, eps: &Tensor) -> Result<Tensor> {
    if eps.shape() != latent.mu.shape() {
        return Err(Error::Shape {
            op: "reparameterize",
            left: latent.mu.shape().to_vec(),
            right: eps.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let lv = LatentVars {
        mu: g.constant(latent.mu.clone()),
        log_var: g.constant(latent.log_var.clone()),
    };
    let e = g.constant(eps.clone());
    let z = reparameterize_vars(&mut g, lv, e)?;
    Ok(g.value(z).clone())
}

/// Decoder output (`[batch × d]` logits, or `[batch × 2d]` mean ‖ log σ²
/// for Gaussians) and hidden activations.
pub fn decode(params: &ParamStore, wiring: &Wiring, z: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    if z.shape().len() != 2 || z.cols() != wiring.config.latent_dim {
        return Err(Error::Shape {
            op: "decode",
            left: z.shape().to_vec(),
            right: vec![wiring.config.latent_dim],
        });
    }
    if !z.is_finite() {
        return Err(Error::Numeric("non-finite latent code".into()));
    }
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params);
    let zv = g.constant(z.clone());
    let (out, trace) = decode_vars(&mut g, &bound, wiring, zv, &mut Vec::new())?;
    let recon = match out.log_var {
        None => g.value(out.mean).clone(),
        Some(lv) => concat_cols(g.value(out.mean), g.value(lv)),
    };
    Ok((recon, trace.into_iter().map(|v| g.value(v).clone()).collect()))
}

pub(crate) fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (ca, cb) = (a.cols(), b.cols());
    let mut data = Vec::with_capacity(a.len() + b.len());
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Tensor::new(vec![a.rows(), ca + cb], data).expect("matching rows")
}

pub(crate) fn split_cols(t: &Tensor, left: usize) -> (Tensor, Tensor) {
    let c = t.cols();
    let mut a = Vec::with_capacity(t.rows() * left);
    let mut b = Vec::with_capacity(t.rows() * (c - left));
    for r in 0..t.rows() {
        let row = t.row(r);
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    (
        Tensor::new(vec![t.rows(), left], a).expect("split"),
        Tensor::new(vec![t.rows(), c - left], b).expect("split"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Preset;

    fn small(preset: Preset, depth: usize) -> NetworkConfig {
        NetworkConfig {
            input_dim: 6,
            hidden_width: 5,
            latent_dim: 2,
            ..NetworkConfig::preset(preset, depth)
        }
    }

    #[test]
    fn shallow_preset_has_no_skips() {
        let (p, w) = build_network(&NetworkConfig::preset(Preset::Vae1L, 11), 0).unwrap();
        assert_eq!(w.encoder.depth(), 1);
        assert_eq!(w.decoder.depth(), 1);
        assert!(w.encoder.skips.is_empty() && w.decoder.skips.is_empty());
        assert_eq!(p.side_len(Side::Encoder), 1);
        assert_eq!(p.side_len(Side::LatentHead), 2);
        assert_eq!(p.side_len(Side::Decoder), 2);
    }

    #[test]
    fn scvae_has_one_edge_per_skippable_layer() {
        let (_, w) = build_network(&small(Preset::Scvae, 11), 0).unwrap();
        for plan in [&w.encoder, &w.decoder] {
            assert_eq!(plan.skips.len(), 10);
            for (k, e) in plan.skips.iter().enumerate() {
                assert_eq!((e.from, e.to), (k + 1, k + 2));
                assert!(e.projection.is_none());
            }
        }
    }

    #[test]
    fn scvae_l_has_single_encoder_long_skip() {
        let (_, w) = build_network(&small(Preset::ScvaeL, 11), 0).unwrap();
        assert_eq!(w.encoder.skips.len(), 1);
        assert_eq!((w.encoder.skips[0].from, w.encoder.skips[0].to), (1, 11));
        assert!(w.decoder.skips.is_empty());
    }

    #[test]
    fn out_of_range_long_skip_is_config_error() {
        let mut c = small(Preset::Vae11L, 4);
        c.decoder_skip = SkipMode::Long { from: 2, to: 9 };
        assert!(matches!(build_network(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn projection_used_when_widths_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = StackPlan::new(
            Side::Encoder,
            vec![3, 4, 6, 2],
            SkipMode::Long { from: 1, to: 3 },
            Activation::Tanh,
            &mut rng,
        )
        .unwrap();
        let p = plan.skips[0].projection.as_ref().unwrap();
        assert_eq!(p.shape(), &[2, 4]);
    }

    #[test]
    fn trace_lengths_match_depths() {
        let c = small(Preset::VaeQpp, 4);
        let (p, w) = build_network(&c, 3).unwrap();
        let x = Tensor::new(vec![1, 6], vec![0.2, 0.9, 0.0, 1.0, 0.5, 0.3]).unwrap();
        let (lat, trace) = encode(&p, &w, &x).unwrap();
        assert_eq!(trace.len(), 4);
        assert_eq!(lat.mu.shape(), &[1, 2]);
        let (out, dtrace) = decode(&p, &w, &lat.mu).unwrap();
        assert_eq!(dtrace.len(), 1);
        assert_eq!(out.shape(), &[1, 6]);
    }

    #[test]
    fn zero_input_gives_finite_clamped_posterior() {
        let (p, w) = build_network(&small(Preset::Scvae, 3), 9).unwrap();
        let (lat, _) = encode(&p, &w, &Tensor::zeros(&[2, 6])).unwrap();
        assert!(lat.mu.is_finite());
        assert!(lat.log_var.data().iter().all(|v| (LOG_VAR_MIN..=LOG_VAR_MAX).contains(v)));
    }

    #[test]
    fn zero_code_decodes_to_output_bias() {
        let (mut p, w) = build_network(&small(Preset::Vae11L, 3), 4).unwrap();
        for l in p.layers_mut() {
            for (k, b) in l.bias.data_mut().iter_mut().enumerate() {
                *b = if l.side == Side::Decoder && l.index == 4 { 0.1 * k as f64 } else { 0.0 };
            }
        }
        let (out, _) = decode(&p, &w, &Tensor::zeros(&[1, 2])).unwrap();
        let expected: Vec<f64> = (0..6).map(|k| 0.1 * k as f64).collect();
        assert_eq!(out.data(), expected.as_slice());
    }

    #[test]
    fn encode_is_deterministic() {
        let c = small(Preset::Scvae, 3);
        let x = Tensor::new(vec![1, 6], vec![0.1; 6]).unwrap();
        let (p1, w1) = build_network(&c, 5).unwrap();
        let (p2, w2) = build_network(&c, 5).unwrap();
        assert_eq!(encode(&p1, &w1, &x).unwrap().0, encode(&p2, &w2, &x).unwrap().0);
        let z = Tensor::new(vec![1, 2], vec![0.3, -0.4]).unwrap();
        assert_eq!(decode(&p1, &w1, &z).unwrap().0, decode(&p2, &w2, &z).unwrap().0);
    }

    #[test]
    fn reparameterize_closed_forms() {
        let t = |v: Vec<f64>| Tensor::new(vec![1, v.len()], v).unwrap();
        let lat = GaussianLatent::new(t(vec![0.7, -1.0]), t(vec![0.3, 2.0])).unwrap();
        assert_eq!(reparameterize(&lat, &t(vec![0.0, 0.0])).unwrap().data(), &[0.7, -1.0]);
        let unit = GaussianLatent::new(t(vec![0.0, 0.0]), t(vec![0.0, 0.0])).unwrap();
        assert_eq!(reparameterize(&unit, &t(vec![1.3, -0.2])).unwrap().data(), &[1.3, -0.2]);
        let two = GaussianLatent::new(t(vec![1.0]), t(vec![4f64.ln()])).unwrap();
        let z = reparameterize(&two, &t(vec![1.0])).unwrap().item();
        assert!((z - 3.0).abs() < 1e-12);
        assert!(reparameterize(&two, &t(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn encode_rejects_out_of_range_pixels() {
        let (p, w) = build_network(&small(Preset::Vae1L, 1), 0).unwrap();
        let x = Tensor::new(vec![1, 6], vec![0.0, 0.0, 1.5, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(encode(&p, &w, &x), Err(Error::Input(_))));
    }

    #[test]
    fn non_finite_weights_report_layer() {
        let (mut p, w) = build_network(&small(Preset::Vae11L, 3), 0).unwrap();
        p.layers_mut()[1].weight.data_mut()[0] = f64::INFINITY;
        let x = Tensor::new(vec![1, 6], vec![0.5; 6]).unwrap();
        let err = encode(&p, &w, &x).unwrap_err().to_string();
        assert!(err.contains("encoder layer 2"), "{err}");
    }
}
