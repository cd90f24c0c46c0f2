//! Gossip topologies and doubly stochastic mixing matrices.

mod gossip;
mod topology;

pub use gossip::{gossip_mix, GossipMatrix, MatrixReport, MixingScheme};
pub use topology::{build_topology, Topology, TopologyKind};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("random graph with K={k}, edge_prob={edge_prob} stayed disconnected after {attempts} attempts")]
    ConnectivityFailure {
        k: usize,
        edge_prob: f64,
        attempts: usize,
    },
    #[error("scheme {scheme} cannot be used with a {kind} topology")]
    SchemeMismatch { scheme: String, kind: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}
