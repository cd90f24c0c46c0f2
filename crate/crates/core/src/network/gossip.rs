use std::fmt;

use nalgebra::DMatrix;

use super::{NetworkError, Topology, TopologyKind};
use crate::linalg::{sym_eigenvalues, Mixable};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixingScheme {
    /// Weight 1/3 on self and both ring neighbours.
    UniformRing,
    /// Metropolis–Hastings weights `1 / (1 + max(deg_i, deg_j))`, residual on the diagonal.
    Metropolis,
    /// Exact averaging `ones * onesᵀ / K` (complete graph only).
    MeanMatrix,
}

impl fmt::Display for MixingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MixingScheme::UniformRing => "uniform_ring",
            MixingScheme::Metropolis => "metropolis",
            MixingScheme::MeanMatrix => "mean_matrix",
        };
        f.write_str(s)
    }
}

/// Symmetric doubly stochastic mixing matrix together with its consensus
/// parameter `rho = ‖W − 11ᵀ/K‖₂²`.
#[derive(Debug, Clone)]
pub struct GossipMatrix<T: Scalar> {
    w: DMatrix<T>,
    rho: T,
    /// Nonzero entries of each row, ascending column order. Mixing sums in
    /// this order so results do not depend on how agents are scheduled.
    rows: Vec<Vec<(usize, T)>>,
}

/// Invariant check of a [`GossipMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixReport {
    pub k: usize,
    pub rho: f64,
    pub max_row_dev: f64,
    pub max_col_dev: f64,
    pub max_asymmetry: f64,
    pub min_entry: f64,
    pub support_ok: bool,
    pub connected: bool,
}

impl MatrixReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_row_dev <= tol
            && self.max_col_dev <= tol
            && self.max_asymmetry <= tol
            && self.min_entry >= 0.0
            && self.support_ok
            && self.connected
            && self.rho < 1.0
    }
}

impl<T: Scalar> GossipMatrix<T> {
    /// Build the mixing matrix of `topology` under `scheme`.
    pub fn new(topology: &Topology, scheme: MixingScheme) -> Result<Self, NetworkError> {
        let k = topology.num_agents();
        let mismatch = || NetworkError::SchemeMismatch {
            scheme: scheme.to_string(),
            kind: topology.kind().to_string(),
        };
        let w = match scheme {
            MixingScheme::UniformRing => {
                if !topology.is_ring() {
                    return Err(mismatch());
                }
                if k <= 2 {
                    DMatrix::from_element(k, k, T::one() / T::of_usize(k))
                } else {
                    let third = T::one() / T::of(3.0);
                    let mut w = DMatrix::zeros(k, k);
                    for i in 0..k {
                        w[(i, i)] = third;
                        w[(i, (i + 1) % k)] = third;
                        w[(i, (i + k - 1) % k)] = third;
                    }
                    w
                }
            }
            MixingScheme::MeanMatrix => {
                if !topology.is_complete() {
                    return Err(mismatch());
                }
                DMatrix::from_element(k, k, T::one() / T::of_usize(k))
            }
            MixingScheme::Metropolis => {
                let mut w = DMatrix::zeros(k, k);
                for i in 0..k {
                    for &j in topology.neighbors(i) {
                        let d = topology.degree(i).max(topology.degree(j));
                        w[(i, j)] = T::one() / T::of_usize(1 + d);
                    }
                }
                for i in 0..k {
                    let off: T = topology.neighbors(i).iter().fold(T::zero(), |a, &j| a + w[(i, j)]);
                    w[(i, i)] = T::one() - off;
                }
                w
            }
        };
        Ok(Self::from_matrix(w))
    }

    /// Wrap an explicit matrix; `rho` is computed, invariants are not enforced
    /// (use [`GossipMatrix::report`]).
    pub fn from_matrix(w: DMatrix<T>) -> Self {
        let k = w.nrows();
        let rho = consensus_rho(&w);
        let rows = (0..k)
            .map(|i| {
                (0..k)
                    .filter(|&j| w[(i, j)] != T::zero())
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        GossipMatrix { w, rho, rows }
    }

    pub fn num_agents(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.w
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn row(&self, k: usize) -> &[(usize, T)] {
        &self.rows[k]
    }

    /// `Σ_j w_{k,j} values[j]`.
    pub fn mix_at<V: Mixable<T>>(&self, values: &[V], k: usize) -> V {
        let mut acc = values[k].zeros_like();
        for &(j, wkj) in &self.rows[k] {
            acc.add_scaled(wkj, &values[j]);
        }
        acc
    }

    pub fn report(&self, topology: Option<&Topology>) -> MatrixReport {
        let k = self.num_agents();
        let mut max_row_dev = 0.0f64;
        let mut max_col_dev = 0.0f64;
        let mut max_asym = 0.0f64;
        let mut min_entry = f64::INFINITY;
        let mut support_ok = true;
        for i in 0..k {
            let row: f64 = (0..k).map(|j| self.w[(i, j)].as_f64()).sum();
            let col: f64 = (0..k).map(|j| self.w[(j, i)].as_f64()).sum();
            max_row_dev = max_row_dev.max((row - 1.0).abs());
            max_col_dev = max_col_dev.max((col - 1.0).abs());
            for j in 0..k {
                let wij = self.w[(i, j)].as_f64();
                min_entry = min_entry.min(wij);
                max_asym = max_asym.max((wij - self.w[(j, i)].as_f64()).abs());
                if let Some(t) = topology {
                    if wij > 0.0 && !t.has_edge(i, j) {
                        support_ok = false;
                    }
                }
            }
        }
        MatrixReport {
            k,
            rho: self.rho.as_f64(),
            max_row_dev,
            max_col_dev,
            max_asymmetry: max_asym,
            min_entry,
            support_ok,
            connected: topology.is_none_or(Topology::is_connected),
        }
    }
}

/// Squared spectral norm of `W − 11ᵀ/K` from a symmetric eigendecomposition.
fn consensus_rho<T: Scalar>(w: &DMatrix<T>) -> T {
    let k = w.nrows();
    if k <= 1 {
        return T::zero();
    }
    let centered = w.map(|v| v - T::one() / T::of_usize(k));
    let sym = (&centered + centered.transpose()) * T::of(0.5);
    let top = sym_eigenvalues(&sym)
        .into_iter()
        .fold(T::zero(), |a, e| a.max(e.abs()));
    top * top
}

/// One synchronous gossip step: agent `k` receives `Σ_j w_{k,j} values[j]`.
pub fn gossip_mix<T: Scalar, V: Mixable<T>>(
    values: &[V],
    w: &GossipMatrix<T>,
) -> Result<Vec<V>, NetworkError> {
    if values.len() != w.num_agents() {
        return Err(NetworkError::DimensionMismatch(format!(
            "{} values for {} agents",
            values.len(),
            w.num_agents()
        )));
    }
    if let Some(first) = values.first() {
        let shape = first.shape();
        if let Some(bad) = values.iter().position(|v| v.shape() != shape) {
            return Err(NetworkError::DimensionMismatch(format!(
                "agent {bad} holds shape {:?}, expected {shape:?}",
                values[bad].shape()
            )));
        }
    }
    Ok((0..values.len()).map(|k| w.mix_at(values, k)).collect())
}

impl TopologyKind {
    /// Scheme used when the caller does not pick one.
    pub fn default_scheme(self) -> MixingScheme {
        match self {
            TopologyKind::Ring => MixingScheme::UniformRing,
            _ => MixingScheme::Metropolis,
        }
    }
}
