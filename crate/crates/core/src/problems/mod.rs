//! Multi-level problem interface and the shipped problem instances.
//!
//! A problem couples an outer objective `f(x, y_M)` with `M` inner levels
//! `g_m(y_{m-1}, y_m)`, `y_0 = x`, each averaged over `K` agents. Inner
//! levels are indexed from zero in code: `level = 0` is the first inner
//! level and reads `x` as its upstream variable.

mod hypergradient;
mod hyperparam;
mod libsvm;
mod policy_eval;
mod risk_averse;
mod synthetic;

pub use hypergradient::{
    exact_hypergradient, finite_difference_gradient, gradient_check, objective, GradientCheck,
};
pub use hyperparam::{HyperparamConfig, HyperparamProblem};
pub use libsvm::{parse_libsvm, read_libsvm, synthetic_dataset, write_libsvm, Dataset, LibsvmError};
pub use policy_eval::{PolicyEvalConfig, PolicyEvalProblem};
pub use risk_averse::{RiskAverseConfig, RiskAverseProblem};
pub use synthetic::{SyntheticConfig, SyntheticParts, SyntheticQuadratic};

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("level {level}: generated spectrum violates 0 < mu <= L ({detail})")]
    SpectrumViolation { level: usize, detail: String },
    #[error("problem `{0}` exposes no exact best-response oracle")]
    NoExactOracle(String),
    #[error("agent {agent} received an empty data shard")]
    EmptyShard { agent: usize },
    #[error("inner problem is not strongly convex at the queried point")]
    NotStronglyConvex,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Libsvm(#[from] LibsvmError),
}

/// Variable dimensions: `levels[0] = d_x`, `levels[m] = d_m` for `m = 1..=M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemDims {
    levels: Vec<usize>,
    agents: usize,
}

impl ProblemDims {
    pub fn new(levels: Vec<usize>, agents: usize) -> Result<Self, ProblemError> {
        if levels.len() < 2 {
            return Err(ProblemError::InvalidParam("need at least one inner level".into()));
        }
        if levels.contains(&0) || agents == 0 {
            return Err(ProblemError::InvalidParam(format!(
                "dimensions and agent count must be positive: dims={levels:?}, K={agents}"
            )));
        }
        Ok(ProblemDims { levels, agents })
    }

    /// Number of inner levels `M`.
    pub fn num_levels(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn dx(&self) -> usize {
        self.levels[0]
    }

    /// Dimension of inner level `level` (zero-based).
    pub fn level_dim(&self, level: usize) -> usize {
        self.levels[level + 1]
    }

    /// Dimension of the variable feeding inner level `level`.
    pub fn upstream_dim(&self, level: usize) -> usize {
        self.levels[level]
    }

    pub fn all(&self) -> &[usize] {
        &self.levels
    }

    pub fn agents(&self) -> usize {
        self.agents
    }
}

/// Smoothness constants of one inner level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSmoothness<T> {
    pub l_g: T,
    pub mu_g: T,
    pub kappa_g: T,
    /// Lipschitz constant of the second derivatives.
    pub lt_g: T,
    pub c_g: T,
    pub sigma_g: T,
}

impl<T: Scalar> LevelSmoothness<T> {
    /// Constants with `kappa = mu / L`; bounds on moments left unset (infinite).
    pub fn from_spectrum(mu_g: T, l_g: T) -> Self {
        LevelSmoothness {
            l_g,
            mu_g,
            kappa_g: mu_g / l_g,
            lt_g: T::zero(),
            c_g: T::of(f64::INFINITY),
            sigma_g: T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessMeta<T> {
    pub levels: Vec<LevelSmoothness<T>>,
    pub c_f: T,
    pub sigma_f: T,
}

impl<T: Scalar> SmoothnessMeta<T> {
    /// Checks `0 < kappa <= mu / L <= 1` on every level.
    pub fn validate(&self) -> Result<(), ProblemError> {
        for (m, lv) in self.levels.iter().enumerate() {
            let ratio = lv.mu_g / lv.l_g;
            let ok = lv.mu_g > T::zero()
                && lv.l_g > T::zero()
                && lv.kappa_g > T::zero()
                && lv.kappa_g <= ratio * T::of(1.0 + 1e-12)
                && ratio <= T::of(1.0 + 1e-12);
            if !ok {
                return Err(ProblemError::SpectrumViolation {
                    level: m,
                    detail: format!("mu={} L={} kappa={}", lv.mu_g, lv.l_g, lv.kappa_g),
                });
            }
        }
        Ok(())
    }
}

/// First-order information of the outer objective from one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterSample<T: Scalar> {
    /// ∇₁f, length `d_x`.
    pub grad_x: DVector<T>,
    /// ∇₂f, length `d_M`.
    pub grad_y: DVector<T>,
}

/// Gradient and cross derivative of one inner level from one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSample<T: Scalar> {
    /// ∇₂g_m, length `d_m`.
    pub grad_y: DVector<T>,
    /// ∇₁₂²g_m, shape `d_{m-1} × d_m`.
    pub cross: DMatrix<T>,
}

/// Oracle request tags. Levels are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleRequest {
    Grad1F,
    Grad2F,
    Grad2G(usize),
    Grad12G(usize),
    Grad22G(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplePayload<T: Scalar> {
    Vector(DVector<T>),
    Matrix(DMatrix<T>),
}

impl<T: Scalar> SamplePayload<T> {
    /// Column-major flattening, handy for empirical averaging.
    pub fn as_slice(&self) -> &[T] {
        match self {
            SamplePayload::Vector(v) => v.as_slice(),
            SamplePayload::Matrix(m) => m.as_slice(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticSample<T: Scalar> {
    pub request: OracleRequest,
    pub payload: SamplePayload<T>,
}

/// Evaluation point for an oracle request: `(x, y_M)` for outer tags,
/// `(y_{m-1}, y_m)` for level tags.
#[derive(Debug, Clone, Copy)]
pub struct OraclePoint<'a, T: Scalar> {
    pub upstream: &'a DVector<T>,
    pub own: &'a DVector<T>,
}

/// Ground-truth solution when the problem has a closed form or direct solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum<T: Scalar> {
    pub x: DVector<T>,
    pub value: T,
}

/// Inner value / outer gradient split used by the compositional baseline.
pub trait CompositionalProblem<T: Scalar>: Send + Sync {
    /// One draw of agent `agent`'s inner value map at `x`.
    fn sample_inner_value(&self, agent: usize, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T>;
    /// One draw of the inner Jacobian, shape `d_x × d_y`.
    fn sample_inner_jacobian(&self, agent: usize, x: &DVector<T>, rng: &mut dyn RngCore) -> DMatrix<T>;
    /// Mean inner value without noise.
    fn exact_inner_value(&self, x: &DVector<T>) -> DVector<T>;
}

/// A decentralized stochastic multi-level problem.
///
/// Stochastic oracles are unbiased for the exact oracles; they draw only from
/// the supplied RNG so agents never share mutable state.
pub trait MultiLevelProblem<T: Scalar>: Send + Sync {
    fn tag(&self) -> &str;
    fn dims(&self) -> &ProblemDims;
    fn meta(&self) -> &SmoothnessMeta<T>;

    fn sample_outer(&self, agent: usize, x: &DVector<T>, y: &DVector<T>, rng: &mut dyn RngCore) -> OuterSample<T>;
    fn sample_level(
        &self,
        agent: usize,
        level: usize,
        y_prev: &DVector<T>,
        y: &DVector<T>,
        rng: &mut dyn RngCore,
    ) -> LevelSample<T>;
    fn sample_hessian(
        &self,
        agent: usize,
        level: usize,
        y_prev: &DVector<T>,
        y: &DVector<T>,
        rng: &mut dyn RngCore,
    ) -> DMatrix<T>;

    fn exact_outer(&self, x: &DVector<T>, y: &DVector<T>) -> OuterSample<T>;
    fn exact_level(&self, level: usize, y_prev: &DVector<T>, y: &DVector<T>) -> LevelSample<T>;
    fn exact_hessian(&self, level: usize, y_prev: &DVector<T>, y: &DVector<T>) -> DMatrix<T>;
    /// Agent-averaged outer objective `f(x, y_M)`.
    fn outer_value(&self, x: &DVector<T>, y: &DVector<T>) -> T;

    /// Exact best responses `y_1*(x), …, y_M*(x)`.
    fn best_response(&self, _x: &DVector<T>) -> Result<Vec<DVector<T>>, ProblemError> {
        Err(ProblemError::NoExactOracle(self.tag().to_string()))
    }

    fn optimum(&self) -> Option<&Optimum<T>> {
        None
    }

    /// PL / strong convexity modulus of `F`, when known.
    fn pl_constant(&self) -> Option<T> {
        None
    }

    fn compositional(&self) -> Option<&dyn CompositionalProblem<T>> {
        None
    }

    /// Tag-dispatched oracle query.
    fn query(
        &self,
        agent: usize,
        request: OracleRequest,
        at: OraclePoint<'_, T>,
        rng: &mut dyn RngCore,
    ) -> StochasticSample<T> {
        let payload = match request {
            OracleRequest::Grad1F => SamplePayload::Vector(self.sample_outer(agent, at.upstream, at.own, rng).grad_x),
            OracleRequest::Grad2F => SamplePayload::Vector(self.sample_outer(agent, at.upstream, at.own, rng).grad_y),
            OracleRequest::Grad2G(m) => {
                SamplePayload::Vector(self.sample_level(agent, m, at.upstream, at.own, rng).grad_y)
            }
            OracleRequest::Grad12G(m) => {
                SamplePayload::Matrix(self.sample_level(agent, m, at.upstream, at.own, rng).cross)
            }
            OracleRequest::Grad22G(m) => {
                SamplePayload::Matrix(self.sample_hessian(agent, m, at.upstream, at.own, rng))
            }
        };
        StochasticSample { request, payload }
    }

    /// Noise-free, agent-averaged counterpart of [`MultiLevelProblem::query`].
    fn query_exact(&self, request: OracleRequest, at: OraclePoint<'_, T>) -> SamplePayload<T> {
        match request {
            OracleRequest::Grad1F => SamplePayload::Vector(self.exact_outer(at.upstream, at.own).grad_x),
            OracleRequest::Grad2F => SamplePayload::Vector(self.exact_outer(at.upstream, at.own).grad_y),
            OracleRequest::Grad2G(m) => SamplePayload::Vector(self.exact_level(m, at.upstream, at.own).grad_y),
            OracleRequest::Grad12G(m) => SamplePayload::Matrix(self.exact_level(m, at.upstream, at.own).cross),
            OracleRequest::Grad22G(m) => SamplePayload::Matrix(self.exact_hessian(m, at.upstream, at.own)),
        }
    }
}

/// Round-robin assignment of `n` items to `k` shards after a seeded shuffle.
pub(crate) fn round_robin_split(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut shards = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        shards[pos % k].push(i);
    }
    shards
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_reject_zero() {
        assert!(ProblemDims::new(vec![3, 0], 2).is_err());
        assert!(ProblemDims::new(vec![3], 2).is_err());
        assert!(ProblemDims::new(vec![3, 2], 0).is_err());
        let d = ProblemDims::new(vec![4, 3, 2], 5).unwrap();
        assert_eq!(d.num_levels(), 2);
        assert_eq!(d.level_dim(1), 2);
        assert_eq!(d.upstream_dim(1), 3);
    }

    #[test]
    fn meta_validation() {
        let good = SmoothnessMeta {
            levels: vec![LevelSmoothness::from_spectrum(0.5f64, 2.0)],
            c_f: 1.0,
            sigma_f: 0.0,
        };
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.levels[0].kappa_g = 0.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn round_robin_is_balanced() {
        let shards = round_robin_split(200, 5, 1);
        assert!(shards.iter().all(|s| s.len() == 40));
        let mut all: Vec<usize> = shards.concat();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
    }
}
