//! Random graphs and reference computations shared by several test targets.

use ctxgraph::features::Digraph;
use ctxgraph::model::GraphInput;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_digraph(rng: &mut ChaCha8Rng, max_n: usize) -> Digraph {
    let n = rng.gen_range(1..=max_n);
    let p = rng.gen_range(0.0..0.3);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    // A few parallel edges.
    for _ in 0..rng.gen_range(0..3) {
        if let Some(&e) = edges.get(rng.gen_range(0..edges.len().max(1))) {
            edges.push(e);
        }
    }
    Digraph::new(n, edges)
}

/// Dense Google matrix, iterated far past convergence.
pub fn pagerank_oracle(g: &Digraph, d: f64) -> Vec<f64> {
    let n = g.n;
    let mut m = vec![vec![0.0; n]; n];
    let mut out = vec![0usize; n];
    for &(u, _) in &g.edges {
        out[u] += 1;
    }
    for &(u, v) in &g.edges {
        m[v][u] += 1.0 / out[u] as f64;
    }
    for u in 0..n {
        if out[u] == 0 {
            for row in m.iter_mut() {
                row[u] = 1.0 / n as f64;
            }
        }
    }
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..2000 {
        let y: Vec<f64> = (0..n)
            .map(|i| (1.0 - d) / n as f64 + d * (0..n).map(|j| m[i][j] * x[j]).sum::<f64>())
            .collect();
        x = y;
    }
    x
}

/// Moves node `v` to position `perm[v]`.
pub fn permuted(g: &GraphInput, perm: &[usize]) -> GraphInput {
    let mut out = g.clone();
    let d = g.text_dim;
    for (v, &to) in perm.iter().enumerate() {
        out.text[to * d..(to + 1) * d].copy_from_slice(&g.text[v * d..(v + 1) * d]);
        out.structure[to] = g.structure[v];
    }
    out.edges = g.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    out
}
