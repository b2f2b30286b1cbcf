//! Declarative architecture description and the named presets.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Activation;
use crate::error::{Error, Result};

/// Shortcut topology of one side (encoder or decoder).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipMode {
    None,
    /// `h_l = f_l(h_{l-1}) + g(h_{l-1})` for every hidden layer after the first.
    EveryLayer,
    /// A single shortcut `h_to = f_to(h_{to-1}) + g(h_from)`.
    Long { from: usize, to: usize },
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipMode::None => f.write_str("none"),
            SkipMode::EveryLayer => f.write_str("every_layer"),
            SkipMode::Long { from, to } => write!(f, "long({from},{to})"),
        }
    }
}

impl FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "none" => return Ok(SkipMode::None),
            "every_layer" => return Ok(SkipMode::EveryLayer),
            _ => {}
        }
        let inner = s
            .strip_prefix("long(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Config(format!("unknown skip mode '{s}'")))?;
        let (a, b) = inner
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("long skip needs two endpoints: '{s}'")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad long-skip endpoint '{t}'")))
        };
        Ok(SkipMode::Long {
            from: parse(a)?,
            to: parse(b)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Likelihood {
    /// Independent Bernoulli pixels; the decoder emits logits.
    Bernoulli,
    /// Independent Gaussians; the decoder emits a mean and a log variance.
    DiagonalGaussian,
}

impl fmt::Display for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Likelihood::Bernoulli => "bernoulli",
            Likelihood::DiagonalGaussian => "diagonal_gaussian",
        })
    }
}

impl FromStr for Likelihood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Likelihood::Bernoulli),
            "diagonal_gaussian" => Ok(Likelihood::DiagonalGaussian),
            other => Err(Error::Config(format!("unknown likelihood '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub hidden_width: usize,
    pub latent_dim: usize,
    pub encoder_skip: SkipMode,
    pub decoder_skip: SkipMode,
    pub activation: Activation,
    pub likelihood: Likelihood,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: 784,
            encoder_depth: 1,
            decoder_depth: 1,
            hidden_width: 500,
            latent_dim: 50,
            encoder_skip: SkipMode::None,
            decoder_skip: SkipMode::None,
            activation: Activation::Tanh,
            likelihood: Likelihood::Bernoulli,
        }
    }
}

impl NetworkConfig {
    /// Architecture of a named preset. `deep_depth` is the hidden-layer
    /// count of every deepened side (11 for the full-size models).
    pub fn preset(preset: Preset, deep_depth: usize) -> Self {
        let d = deep_depth;
        let (enc, dec, es, ds) = match preset {
            Preset::Vae1L => (1, 1, SkipMode::None, SkipMode::None),
            Preset::Vae11L => (d, d, SkipMode::None, SkipMode::None),
            Preset::VaeQpp => (d, 1, SkipMode::None, SkipMode::None),
            Preset::VaePpp => (1, d, SkipMode::None, SkipMode::None),
            Preset::Scvae => (d, d, SkipMode::EveryLayer, SkipMode::EveryLayer),
            Preset::ScvaeL => (d, d, SkipMode::Long { from: 1, to: d }, SkipMode::None),
        };
        NetworkConfig {
            encoder_depth: enc,
            decoder_depth: dec,
            encoder_skip: es,
            decoder_skip: ds,
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("encoder_depth", self.encoder_depth),
            ("decoder_depth", self.decoder_depth),
            ("hidden_width", self.hidden_width),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        check_skip("encoder", self.encoder_skip, self.encoder_depth)?;
        check_skip("decoder", self.decoder_skip, self.decoder_depth)
    }
}

fn check_skip(side: &str, mode: SkipMode, depth: usize) -> Result<()> {
    if let SkipMode::Long { from, to } = mode {
        if !(0 < from && from < to && to <= depth && to - from >= 2) {
            return Err(Error::Config(format!(
                "{side} long skip ({from},{to}) needs 0 < from, to - from >= 2 and to <= depth {depth}"
            )));
        }
    }
    Ok(())
}

/// The six architectures of the depth/skip comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Vae1L,
    Vae11L,
    VaeQpp,
    VaePpp,
    Scvae,
    ScvaeL,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Vae1L,
        Preset::Vae11L,
        Preset::VaeQpp,
        Preset::VaePpp,
        Preset::Scvae,
        Preset::ScvaeL,
    ];

    /// Command-line / config-file name.
    pub fn key(self) -> &'static str {
        match self {
            Preset::Vae1L => "vae1l",
            Preset::Vae11L => "vae11l",
            Preset::VaeQpp => "vae-qpp",
            Preset::VaePpp => "vae-ppp",
            Preset::Scvae => "scvae",
            Preset::ScvaeL => "scvae-l",
        }
    }

    /// Name used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Preset::Vae1L => "VAE(1L)",
            Preset::Vae11L => "VAE(11L)",
            Preset::VaeQpp => "VAE(q++)",
            Preset::VaePpp => "VAE(p++)",
            Preset::Scvae => "SCVAE",
            Preset::ScvaeL => "SCVAE-L",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset '{s}'")))
    }
}
