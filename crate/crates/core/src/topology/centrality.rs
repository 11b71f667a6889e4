//! Brandes betweenness centrality for nodes and edges of a DAG.
//!
//! All ordered pairs `(s, t)` with at least one directed path contribute; edge
//! lengths are 1 and scores are not normalized. Node scores exclude the
//! pair's endpoints.

use std::collections::{BTreeMap, VecDeque};

use super::{DagTopology, Edge, Path};
use crate::error::{Error, Result};

pub type NodeScores = BTreeMap<usize, f64>;
pub type EdgeScores = BTreeMap<Edge, f64>;

fn brandes(topo: &DagTopology) -> (NodeScores, EdgeScores) {
    let n = topo.node_count();
    let succ: Vec<Vec<usize>> = (0..n).map(|v| topo.successors(v)).collect();
    let mut node = vec![0.0; n];
    let mut edge: EdgeScores = topo.edges().map(|e| (e, 0.0)).collect();
    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0_f64; n];
        let mut dist = vec![usize::MAX; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &succ[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
                *edge.get_mut(&(v, w)).expect("edge present") += c;
                delta[v] += c;
            }
            if w != s {
                node[w] += delta[w];
            }
        }
    }
    (node.into_iter().enumerate().collect(), edge)
}

/// Unnormalized node betweenness over all ordered pairs.
pub fn node_betweenness(topo: &DagTopology) -> NodeScores {
    brandes(topo).0
}

/// Unnormalized edge betweenness over all ordered pairs.
pub fn edge_betweenness(topo: &DagTopology) -> EdgeScores {
    brandes(topo).1
}

/// Node and edge scores together, from one Brandes sweep.
pub(crate) fn betweenness(topo: &DagTopology) -> (NodeScores, EdgeScores) {
    brandes(topo)
}

/// Path score: the sum of its nodes' and edges' betweenness.
pub fn path_betweenness(path: &Path, nodes: &NodeScores, edges: &EdgeScores) -> Result<f64> {
    let mut total = 0.0;
    for v in path.nodes() {
        total += nodes
            .get(v)
            .ok_or_else(|| Error::Internal(format!("no betweenness score for node {v}")))?;
    }
    for e in path.edges() {
        total += edges
            .get(&e)
            .ok_or_else(|| Error::Internal(format!("no betweenness score for edge {e:?}")))?;
    }
    Ok(total)
}
