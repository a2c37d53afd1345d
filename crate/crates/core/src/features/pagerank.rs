//! PageRank by power iteration on small directed multigraphs.

use super::{Digraph, FeatureError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRankOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PageRankOptions {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-10,
            max_iters: 200,
        }
    }
}

/// Scores with uniform teleport; dangling mass is spread uniformly. Parallel
/// edges each carry their share of the source's out-weight. Stops when the L1
/// change drops below `tol` or after `max_iters` sweeps.
pub fn pagerank(g: &Digraph, opts: PageRankOptions) -> Result<Vec<f64>, FeatureError> {
    let n = g.n;
    if n == 0 {
        return Err(FeatureError::EmptyGraph);
    }
    let d = opts.damping;
    let nf = n as f64;
    let mut out_deg = vec![0usize; n];
    for &(u, _) in &g.edges {
        out_deg[u] += 1;
    }
    let mut rank = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for _ in 0..opts.max_iters {
        let dangling: f64 = (0..n).filter(|&u| out_deg[u] == 0).map(|u| rank[u]).sum();
        let base = (1.0 - d) / nf + d * dangling / nf;
        next.iter_mut().for_each(|x| *x = base);
        for &(u, v) in &g.edges {
            next[v] += d * rank[u] / out_deg[u] as f64;
        }
        let delta: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if delta < opts.tol {
            break;
        }
    }
    Ok(rank)
}

/// PageRank of the edge-reversed graph.
pub fn reverse_pagerank(g: &Digraph, opts: PageRankOptions) -> Result<Vec<f64>, FeatureError> {
    pagerank(&g.reversed(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, edges: &[(usize, usize)]) -> Digraph {
        Digraph::new(n, edges.to_vec())
    }

    #[test]
    fn cycle_is_uniform() {
        let r = pagerank(&g(3, &[(0, 1), (1, 2), (2, 0)]), Default::default()).unwrap();
        for x in r {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_pair_is_uniform() {
        let r = pagerank(&g(2, &[]), Default::default()).unwrap();
        assert_eq!(r, vec![0.5, 0.5]);
    }

    #[test]
    fn chain_closed_form() {
        // A→B with B dangling: rA = (1-d)/2 + d·rB/2 and rA + rB = 1
        // give rA = 1/(2+d), rB = (1+d)/(2+d).
        let r = pagerank(&g(2, &[(0, 1)]), Default::default()).unwrap();
        let d = 0.85;
        assert!((r[0] - 1.0 / (2.0 + d)).abs() < 1e-9);
        assert!((r[1] - (1.0 + d) / (2.0 + d)).abs() < 1e-9);
        let rr = reverse_pagerank(&g(2, &[(0, 1)]), Default::default()).unwrap();
        assert!((rr[0] - r[1]).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_errors() {
        assert!(pagerank(&g(0, &[]), Default::default()).is_err());
    }
}
