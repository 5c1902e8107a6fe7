//! Graph powering toolkit.
//!
//! Builds exact distance-k adjacency families over sparse undirected graphs,
//! assembles variable power operators `Σ θ_k A_k` from them, and uses those
//! operators three ways:
//!
//! - as the propagation matrix of a two-layer GCN with learnable `θ` (VPN),
//! - as a family of powered graphs regularizing ordinary GCN training (r-GCN),
//! - as spectral operators on stochastic block models, where the leading
//!   eigenvectors expose community structure.
//!
//! The [`adversarial`] module evaluates trained models under DICE edge
//! perturbations. All numerics (eigensolver, backprop, Adam) live in this crate.

pub mod adversarial;
pub mod dense;
pub mod error;
pub mod graph;
pub mod io;
pub mod nn;
pub mod powering;
pub mod protocol;
pub mod rng;
pub mod sparse;
pub mod spectral;
pub mod synthetic;

pub use error::{Error, Result};
pub use graph::{Graph, Label, NodeData, SbmParams, Splits};
