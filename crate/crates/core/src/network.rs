//! Network topology, self-inclusive neighbourhoods and diffusion weights.
//!
//! A topology is an undirected graph over sensor nodes; the neighbourhood of
//! node `i` contains `i` itself plus every node it communicates with, kept in
//! ascending node order — the canonical stacking order used everywhere else.
//! Diffusion weights are column-stochastic: column `i` holds the convex
//! combination that node `i` applies to the neighbourhood estimates.

use crate::algebra::RMatrix;
use crate::stats::RngStream;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("adjacency matrix must be square and symmetric")]
    AsymmetricAdjacency,
    #[error("node {node} out of range for {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("failed to generate a connected topology after {retries} retries")]
    ConnectivityFailure { retries: usize },
    #[error("invalid topology fixture: {0}")]
    InvalidFixture(String),
    #[error("network must have at least one node")]
    EmptyNetwork,
}

/// Per-node sorted neighbour lists (self-inclusive) from a symmetric
/// adjacency matrix.
pub fn neighbourhoods(adjacency: &[Vec<bool>]) -> Result<Vec<Vec<usize>>, NetworkError> {
    let n = adjacency.len();
    if n == 0 {
        return Err(NetworkError::EmptyNetwork);
    }
    if adjacency.iter().any(|row| row.len() != n) {
        return Err(NetworkError::AsymmetricAdjacency);
    }
    for i in 0..n {
        for k in (i + 1)..n {
            if adjacency[i][k] != adjacency[k][i] {
                return Err(NetworkError::AsymmetricAdjacency);
            }
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut list: Vec<usize> = (0..n).filter(|&k| k == i || adjacency[i][k]).collect();
            list.sort_unstable();
            list
        })
        .collect())
}

/// Node set with undirected adjacency and derived self-inclusive
/// neighbourhoods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    nodes: usize,
    adjacency: Vec<Vec<bool>>,
    neighbourhoods: Vec<Vec<usize>>,
    connected: bool,
}

impl NetworkTopology {
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Result<Self, NetworkError> {
        let lists = neighbourhoods(&adjacency)?;
        let nodes = adjacency.len();
        let connected = is_connected(&lists, nodes);
        Ok(Self { nodes, adjacency, neighbourhoods: lists, connected })
    }

    /// Builds from an undirected edge list over 0-based node ids; self-loops
    /// are implied and ignored if present.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)]) -> Result<Self, NetworkError> {
        if nodes == 0 {
            return Err(NetworkError::EmptyNetwork);
        }
        let mut adjacency = vec![vec![false; nodes]; nodes];
        for &(i, k) in edges {
            if i >= nodes || k >= nodes {
                return Err(NetworkError::NodeOutOfRange { node: i.max(k), nodes });
            }
            if i != k {
                adjacency[i][k] = true;
                adjacency[k][i] = true;
            }
        }
        Self::from_adjacency(adjacency)
    }

    /// Complete graph.
    pub fn complete(nodes: usize) -> Result<Self, NetworkError> {
        let mut edges = Vec::new();
        for i in 0..nodes {
            for k in (i + 1)..nodes {
                edges.push((i, k));
            }
        }
        Self::from_edges(nodes, &edges)
    }

    /// Path graph 0 – 1 – … – (n−1).
    pub fn path(nodes: usize) -> Result<Self, NetworkError> {
        let edges: Vec<(usize, usize)> = (1..nodes).map(|k| (k - 1, k)).collect();
        Self::from_edges(nodes, &edges)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Self-inclusive neighbourhood of `i`, ascending.
    pub fn neighbourhood(&self, node: usize) -> &[usize] {
        &self.neighbourhoods[node]
    }

    pub fn neighbourhoods(&self) -> &[Vec<usize>] {
        &self.neighbourhoods
    }

    /// Neighbourhood size `|N_i|` (self included).
    pub fn degree(&self, node: usize) -> usize {
        self.neighbourhoods[node].len()
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn has_edge(&self, i: usize, k: usize) -> bool {
        self.adjacency[i][k]
    }

    /// Edge list with `i < k`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.nodes {
            for k in (i + 1)..self.nodes {
                if self.adjacency[i][k] {
                    out.push((i, k));
                }
            }
        }
        out
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, NetworkError> {
        if perm.len() != self.nodes {
            return Err(NetworkError::AsymmetricAdjacency);
        }
        let edges: Vec<(usize, usize)> =
            self.edges().iter().map(|&(i, k)| (perm[i], perm[k])).collect();
        Self::from_edges(self.nodes, &edges)
    }

    /// Parses the plain-text fixture format: a `nodes N` header followed by
    /// one `i j` pair per line with 1-based ids. Blank lines and `#` comments
    /// are ignored.
    pub fn parse_fixture(text: &str) -> Result<Self, NetworkError> {
        let mut lines =
            text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| NetworkError::InvalidFixture("missing `nodes N` header".into()))?;
        let nodes = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["nodes", count] => count
                .parse::<usize>()
                .map_err(|_| NetworkError::InvalidFixture(format!("bad node count `{count}`")))?,
            _ => {
                return Err(NetworkError::InvalidFixture(format!(
                    "expected `nodes N` header, got `{header}`"
                )))
            }
        };
        let mut edges = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [i, k] = fields[..] else {
                return Err(NetworkError::InvalidFixture(format!("bad edge line `{line}`")));
            };
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| NetworkError::InvalidFixture(format!("bad node id `{s}`")))
            };
            let (i, k) = (parse(i)?, parse(k)?);
            if i == 0 || k == 0 {
                return Err(NetworkError::InvalidFixture("node ids are 1-based".into()));
            }
            edges.push((i - 1, k - 1));
        }
        Self::from_edges(nodes, &edges)
    }

    /// Formats the topology in the fixture format.
    pub fn to_fixture_string(&self) -> String {
        let mut out = format!("nodes {}\n", self.nodes);
        for (i, k) in self.edges() {
            out.push_str(&format!("{} {}\n", i + 1, k + 1));
        }
        out
    }
}

fn is_connected(neighbourhoods: &[Vec<usize>], nodes: usize) -> bool {
    let mut seen = vec![false; nodes];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &k in &neighbourhoods[i] {
            if !seen[k] {
                seen[k] = true;
                stack.push(k);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Column-stochastic diffusion weight matrix; entry `(k, i)` is the weight
/// `c_{k,i}` that node `i` gives to neighbour `k`, zero outside `N_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionWeights {
    matrix: RMatrix,
}

impl DiffusionWeights {
    /// Nearest-neighbour scheme: `c_{k,i} = |N_k| / Σ_{m∈N_i} |N_m|`.
    pub fn nearest_neighbour(topology: &NetworkTopology) -> Self {
        let n = topology.nodes();
        let mut matrix = RMatrix::zeros(n, n);
        for i in 0..n {
            let norm: f64 =
                topology.neighbourhood(i).iter().map(|&m| topology.degree(m) as f64).sum();
            for &k in topology.neighbourhood(i) {
                matrix[(k, i)] = topology.degree(k) as f64 / norm;
            }
        }
        Self { matrix }
    }

    /// Uniform scheme: `c_{k,i} = 1/|N_i|` on the neighbourhood.
    pub fn uniform(topology: &NetworkTopology) -> Self {
        let n = topology.nodes();
        let mut matrix = RMatrix::zeros(n, n);
        for i in 0..n {
            let w = 1.0 / topology.degree(i) as f64;
            for &k in topology.neighbourhood(i) {
                matrix[(k, i)] = w;
            }
        }
        Self { matrix }
    }

    /// Identity weights: every node keeps its own estimate.
    pub fn identity(nodes: usize) -> Self {
        Self { matrix: RMatrix::identity(nodes, nodes) }
    }

    pub fn weight(&self, k: usize, i: usize) -> f64 {
        self.matrix[(k, i)]
    }

    pub fn matrix(&self) -> &RMatrix {
        &self.matrix
    }

    /// Non-zero `(node, weight)` pairs of column `i`, ascending by node.
    pub fn column(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.matrix.nrows())
            .filter(|&k| self.matrix[(k, i)] != 0.0)
            .map(|k| (k, self.matrix[(k, i)]))
            .collect()
    }

    /// Maximum deviation of any column sum from one.
    pub fn column_sum_deviation(&self) -> f64 {
        (0..self.matrix.ncols())
            .map(|i| (self.matrix.column(i).sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Random geometric topology: `n` nodes uniform in the unit square, edges
/// between pairs within `radius`. If disconnected, the radius is grown by 10%
/// and the edge set rebuilt (same node positions), up to 20 retries.
pub fn random_geometric_topology(
    n: usize,
    radius: f64,
    seed: u64,
) -> Result<NetworkTopology, NetworkError> {
    const MAX_RETRIES: usize = 20;
    if n == 0 {
        return Err(NetworkError::EmptyNetwork);
    }
    let mut rng = RngStream::new(seed).rng();
    let positions: Vec<(f64, f64)> =
        (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
    let mut radius = radius;
    for _ in 0..=MAX_RETRIES {
        let mut edges = Vec::new();
        for i in 0..n {
            for k in (i + 1)..n {
                let dx = positions[i].0 - positions[k].0;
                let dy = positions[i].1 - positions[k].1;
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push((i, k));
                }
            }
        }
        let topology = NetworkTopology::from_edges(n, &edges)?;
        if topology.is_connected() {
            return Ok(topology);
        }
        radius *= 1.1;
    }
    Err(NetworkError::ConnectivityFailure { retries: MAX_RETRIES })
}
