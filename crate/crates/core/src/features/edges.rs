//! Per-edge structural features.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{Digraph, FeatureError};

/// Stand-in length for pairs with no directed path.
pub const UNREACHABLE_PATH_LEN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatures {
    pub centrality: f64,
    pub common_predecessors: usize,
    pub common_successors: usize,
    pub in_jaccard: f64,
    pub out_jaccard: f64,
    pub forward_path_len: f64,
    pub backward_path_len: f64,
}

impl EdgeFeatures {
    pub const DIM: usize = 7;

    pub fn to_vec(&self) -> [f64; Self::DIM] {
        [
            self.centrality,
            self.common_predecessors as f64,
            self.common_successors as f64,
            self.in_jaccard,
            self.out_jaccard,
            self.forward_path_len,
            self.backward_path_len,
        ]
    }
}

/// Directed edge betweenness (Brandes accumulation, unweighted). Each
/// parallel edge is its own path step. Scores are raw pair counts, indexed
/// like `g.edges`.
pub fn edge_betweenness(g: &Digraph) -> Vec<f64> {
    let n = g.n;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (ei, &(u, v)) in g.edges.iter().enumerate() {
        adj[u].push((v, ei));
    }
    let mut score = vec![0.0; g.edges.len()];
    let mut stack = Vec::with_capacity(n);
    let mut preds: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut delta = vec![0.0f64; n];
    let mut queue = VecDeque::new();

    for s in 0..n {
        stack.clear();
        for v in 0..n {
            preds[v].clear();
            sigma[v] = 0.0;
            dist[v] = usize::MAX;
            delta[v] = 0.0;
        }
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &(w, ei) in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push((v, ei));
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &(v, ei) in &preds[w] {
                let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
                score[ei] += c;
                delta[v] += c;
            }
        }
    }
    score
}

fn bfs_len(g: &Digraph, from: usize, to: usize, skip_edge: Option<usize>) -> Option<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); g.n];
    for (ei, &(u, v)) in g.edges.iter().enumerate() {
        if Some(ei) != skip_edge {
            adj[u].push(v);
        }
    }
    let mut dist = vec![usize::MAX; g.n];
    dist[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(v) = q.pop_front() {
        if v == to && v != from {
            return Some(dist[v]);
        }
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                q.push_back(w);
            }
        }
    }
    None
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> (usize, f64) {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    let j = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
    (inter, j)
}

/// All seven features for every edge, indexed like `g.edges`.
pub fn edge_feature_table(g: &Digraph) -> Vec<EdgeFeatures> {
    let centrality = edge_betweenness(g);
    let mut pred = vec![BTreeSet::new(); g.n];
    let mut succ = vec![BTreeSet::new(); g.n];
    for &(u, v) in &g.edges {
        succ[u].insert(v);
        pred[v].insert(u);
    }
    g.edges
        .iter()
        .enumerate()
        .map(|(ei, &(u, v))| {
            let (cp, in_j) = jaccard(&pred[u], &pred[v]);
            let (cs, out_j) = jaccard(&succ[u], &succ[v]);
            let len = |l: Option<usize>| l.map_or(UNREACHABLE_PATH_LEN, |l| l as f64);
            EdgeFeatures {
                centrality: centrality[ei],
                common_predecessors: cp,
                common_successors: cs,
                in_jaccard: in_j,
                out_jaccard: out_j,
                forward_path_len: len(bfs_len(g, u, v, Some(ei))),
                backward_path_len: len(bfs_len(g, v, u, None)),
            }
        })
        .collect()
}

/// Features of a single edge (by position in `g.edges`).
pub fn edge_features(g: &Digraph, edge: usize) -> Result<EdgeFeatures, FeatureError> {
    if edge >= g.edges.len() {
        return Err(FeatureError::NoSuchEdge(edge));
    }
    Ok(edge_feature_table(g)[edge])
}
