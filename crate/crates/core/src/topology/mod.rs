//! Random DAG topologies for the network's node graph.
//!
//! Undirected Erdős–Rényi and Watts–Strogatz samples are oriented from lower
//! to higher node index, so every topology is acyclic and `0..n` is always a
//! topological order. Nodes left without any edge are re-attached to a
//! neighbouring index.

mod centrality;
mod format;
mod paths;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use centrality::{edge_betweenness, node_betweenness, path_betweenness, EdgeScores, NodeScores};
pub use paths::{
    enumerate_paths, rank_paths, select_critical_paths, Path, PathRanking, DEFAULT_PATH_CAP,
};

/// A directed edge `(from, to)` with `from < to`.
pub type Edge = (usize, usize);

/// How many times a degenerate (edgeless) sample is redrawn before giving up.
const MAX_REGENERATIONS: u64 = 16;

/// Provenance of a topology.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    ErdosRenyi { p: f64 },
    WattsStrogatz { k: usize, p: f64 },
    Chain,
    Custom,
}

/// A DAG over nodes `0..node_count` whose edges all ascend in index.
#[derive(Clone, Debug, PartialEq)]
pub struct DagTopology {
    node_count: usize,
    edges: BTreeSet<Edge>,
    generator: Generator,
    seed: u64,
}

impl DagTopology {
    /// Builds a topology from explicit edges. Every edge must ascend.
    pub fn from_edges(
        node_count: usize,
        edges: impl IntoIterator<Item = Edge>,
        generator: Generator,
        seed: u64,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::invalid("a topology needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= j || j >= node_count {
                return Err(Error::invalid(format!(
                    "edge ({i},{j}) must satisfy i < j < {node_count}"
                )));
            }
            set.insert((i, j));
        }
        Ok(Self {
            node_count,
            edges: set,
            generator,
            seed,
        })
    }

    /// Straight chain `0 -> 1 -> ... -> n-1`.
    pub fn chain(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|j| (j - 1, j)), Generator::Chain, 0)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, e: Edge) -> bool {
        self.edges.contains(&e)
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Predecessors of `j` in ascending order.
    pub fn predecessors(&self, j: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, b)| b == j)
            .map(|&(a, _)| a)
            .collect()
    }

    /// Successors of `i` in ascending order.
    pub fn successors(&self, i: usize) -> Vec<usize> {
        self.edges
            .range((i, 0)..(i + 1, 0))
            .map(|&(_, b)| b)
            .collect()
    }

    pub fn sources(&self) -> Vec<usize> {
        let has_in: BTreeSet<usize> = self.edges.iter().map(|e| e.1).collect();
        (0..self.node_count).filter(|v| !has_in.contains(v)).collect()
    }

    pub fn sinks(&self) -> Vec<usize> {
        let has_out: BTreeSet<usize> = self.edges.iter().map(|e| e.0).collect();
        (0..self.node_count).filter(|v| !has_out.contains(v)).collect()
    }

    /// Kahn's algorithm; always succeeds because edges ascend.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let mut indeg = vec![0usize; self.node_count];
        for &(_, j) in &self.edges {
            indeg[j] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..self.node_count).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.node_count);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for w in self.successors(v) {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.insert(w);
                }
            }
        }
        if order.len() != self.node_count {
            return Err(Error::Internal("topology contains a cycle".into()));
        }
        Ok(order)
    }

    /// True when `order` lists every node once with all edges pointing forward.
    pub fn is_topological_order(&self, order: &[usize]) -> bool {
        if order.len() != self.node_count {
            return false;
        }
        let mut pos = vec![usize::MAX; self.node_count];
        for (p, &v) in order.iter().enumerate() {
            if v >= self.node_count || pos[v] != usize::MAX {
                return false;
            }
            pos[v] = p;
        }
        self.edges.iter().all(|&(i, j)| pos[i] < pos[j])
    }

    /// Renames node `v` to `mapping[v]`. The renamed edges must still ascend.
    pub fn relabel(&self, mapping: &[usize]) -> Result<Self> {
        if mapping.len() != self.node_count {
            return Err(Error::invalid("mapping must cover every node"));
        }
        let mut seen = vec![false; self.node_count];
        for &m in mapping {
            if m >= self.node_count || seen[m] {
                return Err(Error::invalid("mapping must be a permutation"));
            }
            seen[m] = true;
        }
        Self::from_edges(
            self.node_count,
            self.edges.iter().map(|&(i, j)| (mapping[i], mapping[j])),
            Generator::Custom,
            self.seed,
        )
    }

    /// Adds an edge to every node that has none, from the node just below it
    /// (or, for node 0, to node 1).
    fn attach_isolated(&mut self) {
        if self.node_count < 2 {
            return;
        }
        let touched: BTreeSet<usize> = self.edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        for v in 0..self.node_count {
            if !touched.contains(&v) {
                let e = if v == 0 { (0, 1) } else { (v - 1, v) };
                self.edges.insert(e);
            }
        }
    }
}

fn orient(edges: impl IntoIterator<Item = Edge>) -> BTreeSet<Edge> {
    edges
        .into_iter()
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect()
}

/// Erdős–Rényi `G(n, p)` sample oriented low to high.
pub fn generate_er(n: usize, p: f64, seed: u64) -> Result<DagTopology> {
    if n < 2 {
        return Err(Error::invalid("ER generator needs n >= 2"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("ER edge probability must lie in (0, 1]"));
    }
    for attempt in 0..MAX_REGENERATIONS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < p {
                    edges.insert((i, j));
                }
            }
        }
        if edges.is_empty() {
            continue;
        }
        let mut topo = DagTopology {
            node_count: n,
            edges,
            generator: Generator::ErdosRenyi { p },
            seed,
        };
        topo.attach_isolated();
        return Ok(topo);
    }
    Err(Error::invalid(format!(
        "ER({n}, {p}) produced no edges in {MAX_REGENERATIONS} draws from seed {seed}"
    )))
}

/// The undirected Watts–Strogatz edge list before orientation.
pub(crate) fn ws_undirected(n: usize, k: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<BTreeSet<usize>> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for u in 0..n {
        for d in 1..=k / 2 {
            let v = (u + d) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    for d in 1..=k / 2 {
        for u in 0..n {
            if rng.gen::<f64>() >= p {
                continue;
            }
            let v = (u + d) % n;
            if !adj[u].contains(&v) || adj[u].len() >= n - 1 {
                continue;
            }
            let candidates: Vec<usize> = (0..n).filter(|&w| w != u && !adj[u].contains(&w)).collect();
            if let Some(&w) = candidates.choose(rng) {
                adj[u].remove(&v);
                adj[v].remove(&u);
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
    }
    adj
}

/// Watts–Strogatz small-world sample oriented low to high.
pub fn generate_ws(n: usize, k: usize, p: f64, seed: u64) -> Result<DagTopology> {
    if k < 2 || k % 2 != 0 || n <= k {
        return Err(Error::invalid("WS generator needs an even k >= 2 and n > k"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("WS rewiring probability must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adj = ws_undirected(n, k, p, &mut rng);
    let edges = orient(
        adj.iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().map(move |&v| (u, v))),
    );
    let mut topo = DagTopology {
        node_count: n,
        edges,
        generator: Generator::WattsStrogatz { k, p },
        seed,
    };
    topo.attach_isolated();
    Ok(topo)
}
