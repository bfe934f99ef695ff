//! Undirected interconnection graphs and their spectral views.
//!
//! Links are stored once per unordered pair as `(lo, hi)` with 0-based node
//! indices. All file and CLI surfaces use 1-based indices; conversion happens
//! at [`Graph::from_one_based`] and [`Graph::link_label`].
//!
//! The oriented incidence matrix `E` (one `+1` head and one `-1` tail per
//! column) satisfies `E Eᵀ = D − A`, the graph Laplacian. The second smallest
//! Laplacian eigenvalue `λ₂` (algebraic connectivity) sets the coupling
//! threshold `k* = θ / (2 λ₂)`.

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Eigenvalues with magnitude below this are reported as exactly zero.
pub const EIGEN_ZERO_SNAP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate link ({0}, {1})")]
    DuplicateLink(usize, usize),
    #[error("node index {index} out of range 1..={n_nodes}")]
    NodeIndexOutOfRange { index: usize, n_nodes: usize },
    #[error("graph is disconnected (lambda2 = 0)")]
    DisconnectedGraph,
    #[error("theta must be positive and finite, got {0}")]
    InvalidTheta(f64),
    #[error("orientation has {got} entries, graph has {expected} links")]
    OrientationLength { expected: usize, got: usize },
}

/// Undirected simple graph with `n_nodes` nodes and an ordered link list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_nodes: usize,
    links: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from 0-based node pairs.
    pub fn new(n_nodes: usize, links: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n_nodes == 0 {
            return Err(GraphError::NoNodes);
        }
        let mut seen = HashSet::with_capacity(links.len());
        let mut stored = Vec::with_capacity(links.len());
        for &(i, j) in links {
            for idx in [i, j] {
                if idx >= n_nodes {
                    return Err(GraphError::NodeIndexOutOfRange {
                        index: idx + 1,
                        n_nodes,
                    });
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop(i + 1));
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateLink(key.0 + 1, key.1 + 1));
            }
            stored.push(key);
        }
        Ok(Self { n_nodes, links: stored })
    }

    /// Builds a graph from 1-based node pairs, as they appear in scenario files.
    pub fn from_one_based(n_nodes: usize, links: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n_nodes == 0 {
            return Err(GraphError::NoNodes);
        }
        let mut zero = Vec::with_capacity(links.len());
        for &(i, j) in links {
            for idx in [i, j] {
                if idx == 0 || idx > n_nodes {
                    return Err(GraphError::NodeIndexOutOfRange { index: idx, n_nodes });
                }
            }
            zero.push((i - 1, j - 1));
        }
        Self::new(n_nodes, &zero)
    }

    /// Path graph `1 - 2 - ... - n`.
    pub fn path(n_nodes: usize) -> Result<Self, GraphError> {
        let links: Vec<_> = (1..n_nodes).map(|i| (i - 1, i)).collect();
        Self::new(n_nodes, &links)
    }

    /// Complete graph on `n_nodes` nodes.
    pub fn complete(n_nodes: usize) -> Result<Self, GraphError> {
        let mut links = Vec::new();
        for i in 0..n_nodes {
            for j in i + 1..n_nodes {
                links.push((i, j));
            }
        }
        Self::new(n_nodes, &links)
    }

    /// Eight-node barbell: complete subgraphs on {1,2,3,4} and {5,6,7,8}
    /// joined by the bridge (4,5). Thirteen links.
    pub fn barbell() -> Self {
        let mut links = Vec::with_capacity(13);
        for offset in [0, 4] {
            for i in 0..4 {
                for j in i + 1..4 {
                    links.push((offset + i, offset + j));
                }
            }
        }
        links.push((3, 4));
        links.sort_unstable();
        Self::new(8, &links).expect("barbell construction is valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    /// Links as 0-based `(lo, hi)` pairs in construction order.
    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    /// Position of the link joining `a` and `b` (0-based), if present.
    pub fn link_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.links.iter().position(|&l| l == key)
    }

    /// `"{i}_{j}"` with 1-based indices, `i < j`.
    pub fn link_label(&self, link: usize) -> String {
        let (i, j) = self.links[link];
        format!("{}_{}", i + 1, j + 1)
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(i, j) in &self.links {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Breadth-first connectivity test.
    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(i, j) in &self.links {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut visited = vec![false; self.n_nodes];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n_nodes
    }

    /// Incidence matrix with the default orientation: head = smaller index.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n_nodes, self.links.len());
        for (l, &(i, j)) in self.links.iter().enumerate() {
            e[(i, l)] = 1.0;
            e[(j, l)] = -1.0;
        }
        e
    }

    /// Incidence matrix where `flipped[l]` makes the larger index the head of link `l`.
    pub fn incidence_oriented(&self, flipped: &[bool]) -> Result<DMatrix<f64>, GraphError> {
        if flipped.len() != self.links.len() {
            return Err(GraphError::OrientationLength {
                expected: self.links.len(),
                got: flipped.len(),
            });
        }
        let mut e = self.incidence();
        for (l, &flip) in flipped.iter().enumerate() {
            if flip {
                let mut col = e.column_mut(l);
                col.neg_mut();
            }
        }
        Ok(e)
    }

    /// Laplacian `D − A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut lap = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for &(i, j) in &self.links {
            lap[(i, i)] += 1.0;
            lap[(j, j)] += 1.0;
            lap[(i, j)] -= 1.0;
            lap[(j, i)] -= 1.0;
        }
        lap
    }

    /// Laplacian eigenvalues in ascending order.
    pub fn laplacian_spectrum(&self) -> Vec<f64> {
        symmetric_eigenvalues(&self.laplacian())
    }

    /// Algebraic connectivity. Zero for disconnected graphs and for `N = 1`.
    pub fn lambda2(&self) -> f64 {
        self.laplacian_spectrum().get(1).copied().unwrap_or(0.0)
    }

    /// Smallest uniform weight `k*` with `2 k* λ₂ − θ > 0` at the boundary.
    pub fn coupling_bound(&self, theta: f64) -> Result<f64, GraphError> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(GraphError::InvalidTheta(theta));
        }
        let l2 = self.lambda2();
        if l2 <= 0.0 {
            return Err(GraphError::DisconnectedGraph);
        }
        Ok(theta / (2.0 * l2))
    }
}

/// Ascending eigenvalues of a symmetric matrix, with near-zero values snapped to 0.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| if v.abs() < EIGEN_ZERO_SNAP { 0.0 } else { v })
        .collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

/// Smallest eigenvalue of a symmetric matrix, unsnapped.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
