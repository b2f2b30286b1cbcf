//! Skip-connected variational autoencoders and a layer-wise Fisher
//! Information probe.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`autodiff`], [`params`], [`optim`], [`checkpoint`]: dense
//!   `f64` tensors, a reverse-mode tape, parameters, Adam and the `SCV1`
//!   binary checkpoint format.
//! * [`model`]: encoder/decoder stacks with optional shortcuts, the
//!   reparameterized forward pass and the ELBO.
//! * [`fisher`]: per-layer empirical Fisher Information, the layer-to-layer
//!   recurrence diagnostic and skip-connection gains.
//! * [`data`]: IDX parsing, the fixed MNIST split and a synthetic dataset.
//! * [`eval`]: importance-weighted NLL, latent-code classification and
//!   latent export.
//! * [`harness`]: run configuration, the training loop, depth sweeps and
//!   the preset comparison table.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod fisher;
pub mod harness;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;

pub use autodiff::{Activation, Graph, Var};
pub use error::{Error, Result};
pub use model::{ElboTerms, GaussianLatent, Likelihood, NetworkConfig, Preset, SkipMode, Wiring};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use params::{LayerParams, ParamStore, Side};
pub use tensor::Tensor;
