use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetworkError;

/// Resampling budget for random graphs.
pub const MAX_CONNECT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Ring,
    Complete,
    Star,
    Random,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Complete => "complete",
            TopologyKind::Star => "star",
            TopologyKind::Random => "random",
        };
        f.write_str(s)
    }
}

/// Undirected graph over `K` agents. Self-loops are implicit: every agent
/// always averages with itself, so `neighbors` lists only the other agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    kind: TopologyKind,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn num_agents(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbors of `i`, excluding `i` itself, in increasing order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i == j || self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// True when every node is reachable from node 0.
    pub fn is_connected(&self) -> bool {
        let n = self.neighbors.len();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }

    /// True for the ring family, including the degenerate K ≤ 2 cases where
    /// the ring coincides with the complete graph.
    pub fn is_ring(&self) -> bool {
        let n = self.num_agents();
        if n <= 2 {
            return self.is_complete();
        }
        (0..n).all(|i| {
            let mut expect = vec![(i + 1) % n, (i + n - 1) % n];
            expect.sort_unstable();
            expect.dedup();
            self.neighbors[i] == expect
        })
    }

    pub fn is_complete(&self) -> bool {
        let n = self.num_agents();
        self.neighbors.iter().all(|nb| nb.len() + 1 == n)
    }

    fn from_edges(kind: TopologyKind, k: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut neighbors = vec![Vec::new(); k];
        for (i, j) in edges {
            if i != j {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
            nb.dedup();
        }
        Topology { kind, neighbors }
    }
}

/// Build a connected undirected graph over `k` agents.
///
/// `edge_prob` and `seed` are only consulted for [`TopologyKind::Random`]
/// (Erdős–Rényi). A disconnected draw is resampled with seed `seed + attempt`.
/// A ring on two agents is the complete graph on two agents.
pub fn build_topology(
    kind: TopologyKind,
    k: usize,
    edge_prob: f64,
    seed: u64,
) -> Result<Topology, NetworkError> {
    if k == 0 {
        return Err(NetworkError::InvalidParam("K must be at least 1".into()));
    }
    let topo = match kind {
        TopologyKind::Ring => {
            let edges = (0..k).map(|i| (i, (i + 1) % k));
            Topology::from_edges(kind, k, edges)
        }
        TopologyKind::Complete => {
            let edges = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j)));
            Topology::from_edges(kind, k, edges)
        }
        TopologyKind::Star => Topology::from_edges(kind, k, (1..k).map(|j| (0, j))),
        TopologyKind::Random => {
            if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                return Err(NetworkError::InvalidParam(format!(
                    "edge_prob must lie in (0, 1], got {edge_prob}"
                )));
            }
            return (0..MAX_CONNECT_ATTEMPTS)
                .map(|attempt| erdos_renyi(k, edge_prob, seed.wrapping_add(attempt as u64)))
                .find(Topology::is_connected)
                .ok_or(NetworkError::ConnectivityFailure {
                    k,
                    edge_prob,
                    attempts: MAX_CONNECT_ATTEMPTS,
                });
        }
    };
    debug_assert!(topo.is_connected());
    Ok(topo)
}

fn erdos_renyi(k: usize, p: f64, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Topology::from_edges(TopologyKind::Random, k, edges)
}
