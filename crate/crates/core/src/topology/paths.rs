//! Source-to-sink path enumeration, path ranking by betweenness, and
//! critical-path selection.

use std::cmp::Ordering;

use super::centrality::{betweenness, path_betweenness};
use super::{DagTopology, Edge};
use crate::error::{Error, Result};

/// Default upper bound on the number of enumerated paths.
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

/// A simple directed path, listed by node.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    nodes: Vec<usize>,
}

impl Path {
    pub fn new(nodes: Vec<usize>) -> Self {
        Self { nodes }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Consecutive node pairs.
    pub fn edges(&self) -> Vec<Edge> {
        self.nodes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Number of edges.
    pub fn length(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }
}

impl std::fmt::Display for Path {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.nodes.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

/// Every simple path from a source to a sink, found depth-first with
/// ascending child order. Fails rather than truncating past `cap` paths.
pub fn enumerate_paths(topo: &DagTopology, cap: usize) -> Result<Vec<Path>> {
    let n = topo.node_count();
    let succ: Vec<Vec<usize>> = (0..n).map(|v| topo.successors(v)).collect();
    let mut out = Vec::new();
    for s in topo.sources() {
        // explicit stack of (node, next child index)
        let mut path = vec![s];
        let mut cursor = vec![0usize];
        while let Some(&v) = path.last() {
            if succ[v].is_empty() {
                if out.len() == cap {
                    return Err(Error::Capacity { cap });
                }
                out.push(Path::new(path.clone()));
            }
            let i = cursor.last_mut().expect("cursor tracks path");
            if *i < succ[v].len() {
                let w = succ[v][*i];
                *i += 1;
                path.push(w);
                cursor.push(0);
            } else {
                path.pop();
                cursor.pop();
            }
        }
    }
    Ok(out)
}

/// Paths with their betweenness score, sorted by descending score with
/// ties in ascending lexicographic node order.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRanking {
    entries: Vec<(Path, f64)>,
}

fn by_score_desc(a: &(Path, f64), b: &(Path, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl PathRanking {
    pub fn new(mut entries: Vec<(Path, f64)>) -> Self {
        entries.sort_by(by_score_desc);
        Self { entries }
    }

    pub fn entries(&self) -> &[(Path, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tab-separated `rank  score  path` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("rank\tscore\tpath\n");
        for (i, (p, c)) in self.entries.iter().enumerate() {
            s.push_str(&format!("{}\t{c:?}\t{p}\n", i + 1));
        }
        s
    }
}

/// Scores and sorts every source-to-sink path of `topo`.
pub fn rank_paths(topo: &DagTopology, cap: usize) -> Result<PathRanking> {
    let (nodes, edges) = betweenness(topo);
    let entries = enumerate_paths(topo, cap)?
        .into_iter()
        .map(|p| {
            let s = path_betweenness(&p, &nodes, &edges)?;
            Ok((p, s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathRanking::new(entries))
}

/// The `k` highest-scoring paths when the tasks are similar, else the `k`
/// lowest-scoring ones. Equal scores prefer the lexicographically smaller path.
pub fn select_critical_paths(ranking: &PathRanking, k: usize, similar: bool) -> Result<Vec<Path>> {
    if k == 0 || k > ranking.len() {
        return Err(Error::invalid(format!(
            "critical path capacity {k} must lie in 1..={}",
            ranking.len()
        )));
    }
    if similar {
        return Ok(ranking.entries[..k].iter().map(|(p, _)| p.clone()).collect());
    }
    let mut ascending = ranking.entries.clone();
    ascending.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ascending[..k].iter().map(|(p, _)| p.clone()).collect())
}
