//! Variational autoencoder with configurable depth and shortcut topology.

pub mod config;
pub mod network;
pub mod objective;

pub use config::{Likelihood, NetworkConfig, Preset, SkipMode};
pub use network::{
    build_network, decode, encode, reparameterize, AffineTap, BoundParams, GaussianLatent, SkipEdge,
    StackPlan, Wiring,
};
pub use objective::{elbo, forward, ElboTerms, ForwardPass};
