//! Gossip-based decentralized stochastic multi-level optimization.
//!
//! The crate is generic over the scalar type (`f32` or `f64`); the aliases at
//! the bottom name the common concrete instantiations.

pub mod algorithms;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod problems;
pub mod scalar;

pub use scalar::Scalar;

pub type GossipMatrix64 = network::GossipMatrix<f64>;
pub type GossipMatrix32 = network::GossipMatrix<f32>;
pub type SyntheticQuadratic64 = problems::SyntheticQuadratic<f64>;
pub type SyntheticQuadratic32 = problems::SyntheticQuadratic<f32>;
pub type HyperparamProblem64 = problems::HyperparamProblem<f64>;
pub type PolicyEvalProblem64 = problems::PolicyEvalProblem<f64>;
pub type RiskAverseProblem64 = problems::RiskAverseProblem<f64>;
