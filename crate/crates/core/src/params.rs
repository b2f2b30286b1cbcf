//! Trainable parameters grouped by layer.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which part of the autoencoder a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Encoder,
    Decoder,
    /// The μ and log σ² heads of the posterior.
    LatentHead,
}

impl Side {
    pub fn tag(self) -> u8 {
        match self {
            Side::Encoder => 0,
            Side::Decoder => 1,
            Side::LatentHead => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Side::Encoder),
            1 => Ok(Side::Decoder),
            2 => Ok(Side::LatentHead),
            t => Err(Error::Format(format!("unknown side tag {t}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Encoder => "encoder",
            Side::Decoder => "decoder",
            Side::LatentHead => "latent-head",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(Side::Encoder),
            "decoder" => Ok(Side::Decoder),
            "latent-head" => Ok(Side::LatentHead),
            other => Err(Error::Format(format!("unknown side '{other}'"))),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One dense layer: `weight` is `[n_out × n_in]`, `bias` is `[n_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub side: Side,
    /// 1-based position within its side.
    pub index: u32,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    /// Fan-in scaled uniform weights (unit gain) and zero bias.
    pub fn init<R: Rng + ?Sized>(side: Side, index: u32, n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (3.0 / n_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let data = (0..n_in * n_out).map(|_| dist.sample(rng)).collect();
        LayerParams {
            side,
            index,
            weight: Tensor::new(vec![n_out, n_in], data).expect("positive dims"),
            bias: Tensor::zeros(&[n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn label(&self) -> String {
        format!("{} layer {}", self.side, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    layers: Vec<LayerParams>,
}

impl ParamStore {
    /// Validates shapes and that indices run 1, 2, … within each side.
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        for side in [Side::Encoder, Side::Decoder, Side::LatentHead] {
            for (expected, l) in (1u32..).zip(layers.iter().filter(|l| l.side == side)) {
                if l.index != expected {
                    return Err(Error::Config(format!(
                        "{side} layer indices must be contiguous from 1, found {} where {expected} was expected",
                        l.index
                    )));
                }
            }
        }
        for l in &layers {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.n_out()] {
                return Err(Error::Shape {
                    op: "layer",
                    left: l.weight.shape().to_vec(),
                    right: l.bias.shape().to_vec(),
                });
            }
        }
        Ok(ParamStore { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn get(&self, side: Side, index: u32) -> Option<&LayerParams> {
        self.layers
            .iter()
            .find(|l| l.side == side && l.index == index)
    }

    pub fn side_len(&self, side: Side) -> usize {
        self.layers.iter().filter(|l| l.side == side).count()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    /// Every parameter tensor in storage order (weight before bias).
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn clear_grads(&mut self) {
        for t in self.tensors_mut() {
            t.clear_grad();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = LayerParams::init(Side::Encoder, 1, 12, 5, &mut rng);
        let limit = (3.0f64 / 12.0).sqrt();
        assert_eq!(l.weight.shape(), &[5, 12]);
        assert!(l.weight.data().iter().all(|w| w.abs() <= limit));
        assert!(l.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn rejects_gapped_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layers = vec![
            LayerParams::init(Side::Encoder, 1, 2, 2, &mut rng),
            LayerParams::init(Side::Encoder, 3, 2, 2, &mut rng),
        ];
        assert!(ParamStore::new(layers).is_err());
    }

    #[test]
    fn side_tags_round_trip() {
        for s in [Side::Encoder, Side::Decoder, Side::LatentHead] {
            assert_eq!(Side::from_tag(s.tag()).unwrap(), s);
            assert_eq!(Side::parse(s.as_str()).unwrap(), s);
        }
        assert!(Side::from_tag(9).is_err());
    }
}
