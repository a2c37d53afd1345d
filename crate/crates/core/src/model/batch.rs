use std::fmt;
use std::sync::Arc;

use super::{ModelError, EDGE_BLOCK_DIM, STRUCT_DIM};
use crate::autodiff::{Scalar, Tensor};
use crate::features::{EdgeFeatures, FeatureArrays, FeaturedGraph};
use crate::ingest::EmbeddingTable;
use crate::kg::KnowledgeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Evidence,
    Claim,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Evidence => "evidence",
            Side::Claim => "claim",
        })
    }
}

/// Numeric view of one featured graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub nodes: usize,
    pub text_dim: usize,
    /// Row-major `nodes × text_dim` label embeddings.
    pub text: Vec<f32>,
    pub structure: Vec<[f32; STRUCT_DIM]>,
    pub edges: Vec<(usize, usize)>,
    pub mean_edge: [f32; EdgeFeatures::DIM],
}

impl GraphInput {
    pub fn from_featured(fg: &FeaturedGraph) -> Self {
        let text_dim = fg.embedding_dim();
        Self {
            nodes: fg.node_count(),
            text_dim,
            text: fg.embeddings.concat(),
            structure: fg.structure.iter().map(|s| s.to_vec().map(|v| v as f32)).collect(),
            edges: fg.edge_index.clone(),
            mean_edge: fg.mean_edge_features().map(|v| v as f32),
        }
    }

    /// Rebuilds the input from the stored graph, its node-id keyed embedding
    /// table and its feature arrays.
    pub fn from_parts(graph: &KnowledgeGraph, table: &EmbeddingTable, arrays: &FeatureArrays) -> Result<Self, String> {
        if arrays.node_struct.len() != graph.node_count() {
            return Err(format!(
                "{} structural rows for {} nodes",
                arrays.node_struct.len(),
                graph.node_count()
            ));
        }
        let mut text = Vec::with_capacity(graph.node_count() * table.dim());
        for n in &graph.nodes {
            let v = table
                .get(&n.id)
                .ok_or_else(|| format!("no embedding for node {:?}", n.id))?;
            text.extend_from_slice(v);
        }
        let mut mean_edge = [0.0f32; EdgeFeatures::DIM];
        if let Some(rows) = arrays.edge.as_ref().filter(|r| !r.is_empty()) {
            let mut acc = [0.0f64; EdgeFeatures::DIM];
            for r in rows {
                for (a, &v) in acc.iter_mut().zip(r) {
                    *a += v as f64;
                }
            }
            for (m, a) in mean_edge.iter_mut().zip(acc) {
                *m = (a / rows.len() as f64) as f32;
            }
        }
        Ok(Self {
            nodes: graph.node_count(),
            text_dim: table.dim(),
            text,
            structure: arrays.node_struct.clone(),
            edges: graph.edge_indices(),
            mean_edge,
        })
    }

    fn check(&self, id: &str, side: Side, text_dim: usize) -> Result<(), ModelError> {
        let input_err = |message: String| ModelError::Input {
            id: id.to_string(),
            message,
        };
        if self.nodes == 0 {
            return Err(ModelError::EmptyGraph {
                id: id.to_string(),
                side,
            });
        }
        if self.text_dim != text_dim || self.text.len() != self.nodes * text_dim {
            return Err(input_err(format!(
                "{side} embeddings have dim {}, model expects {text_dim}",
                self.text_dim
            )));
        }
        if self.structure.len() != self.nodes {
            return Err(input_err(format!("{side} structural rows do not match node count")));
        }
        if self.edges.iter().any(|&(u, v)| u >= self.nodes || v >= self.nodes) {
            return Err(input_err(format!("{side} edge endpoint out of range")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput {
    pub id: String,
    pub label: u8,
    pub evidence: GraphInput,
    pub claim: GraphInput,
}

impl SampleInput {
    pub fn validate(&self, text_dim: usize) -> Result<(), ModelError> {
        self.evidence.check(&self.id, Side::Evidence, text_dim)?;
        self.claim.check(&self.id, Side::Claim, text_dim)
    }
}

/// Block-diagonal composition of several samples.
///
/// Node rows are all evidence nodes (sample by sample) followed by all claim
/// nodes. Every node gets a self-loop; messages flow along edge direction.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    pub size: usize,
    pub nodes: usize,
    pub x_text: Tensor<T>,
    pub x_struct: Tensor<T>,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub evidence_rows: Arc<[usize]>,
    pub claim_rows: Arc<[usize]>,
    /// Sample index of each evidence row.
    pub evidence_sample: Arc<[usize]>,
    /// Sample index of each claim row.
    pub claim_sample: Arc<[usize]>,
    /// Claim-row position of each cross-attention pair.
    pub pair_query: Arc<[usize]>,
    /// Evidence-row position of each cross-attention pair.
    pub pair_key: Arc<[usize]>,
    pub edge_block: Option<Tensor<T>>,
    pub labels: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(samples: &[&SampleInput], text_dim: usize, edge_features: bool) -> Result<Self, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::Input {
                id: String::new(),
                message: "empty batch".into(),
            });
        }
        for s in samples {
            s.validate(text_dim)?;
        }
        let graphs: Vec<(&GraphInput, usize)> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (&s.evidence, i))
            .chain(samples.iter().enumerate().map(|(i, s)| (&s.claim, i)))
            .collect();
        let n: usize = graphs.iter().map(|(g, _)| g.nodes).sum();

        let mut text = Vec::with_capacity(n * text_dim);
        let mut strct = Vec::with_capacity(n * STRUCT_DIM);
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        let mut offsets = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for (g, _) in &graphs {
            offsets.push(offset);
            text.extend(g.text.iter().map(|&v| T::from_f64(v as f64)));
            strct.extend(g.structure.iter().flatten().map(|&v| T::from_f64(v as f64)));
            for v in 0..g.nodes {
                src.push(offset + v);
                dst.push(offset + v);
            }
            for &(u, v) in &g.edges {
                src.push(offset + u);
                dst.push(offset + v);
            }
            offset += g.nodes;
        }

        let b = samples.len();
        let ev_total: usize = samples.iter().map(|s| s.evidence.nodes).sum();
        let evidence_rows: Vec<usize> = (0..ev_total).collect();
        let claim_rows: Vec<usize> = (ev_total..n).collect();
        let evidence_sample: Vec<usize> = samples
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i, s.evidence.nodes))
            .collect();
        let claim_sample: Vec<usize> = samples
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i, s.claim.nodes))
            .collect();

        let (mut pair_query, mut pair_key) = (Vec::new(), Vec::new());
        for i in 0..b {
            let ev0 = offsets[i];
            let cl0 = offsets[b + i] - ev_total;
            for q in 0..samples[i].claim.nodes {
                for k in 0..samples[i].evidence.nodes {
                    pair_query.push(cl0 + q);
                    pair_key.push(ev0 + k);
                }
            }
        }

        let edge_block = edge_features.then(|| {
            Tensor::from_fn(b, EDGE_BLOCK_DIM, |r, c| {
                let half = EDGE_BLOCK_DIM / 2;
                let v = if c < half {
                    samples[r].evidence.mean_edge[c]
                } else {
                    samples[r].claim.mean_edge[c - half]
                };
                T::from_f64(v as f64)
            })
        });

        Ok(Self {
            size: b,
            nodes: n,
            x_text: Tensor::from_vec(n, text_dim, text)?,
            x_struct: Tensor::from_vec(n, STRUCT_DIM, strct)?,
            src: src.into(),
            dst: dst.into(),
            evidence_rows: evidence_rows.into(),
            claim_rows: claim_rows.into(),
            evidence_sample: evidence_sample.into(),
            claim_sample: claim_sample.into(),
            pair_query: pair_query.into(),
            pair_key: pair_key.into(),
            edge_block,
            labels: samples.iter().map(|s| T::from_f64(s.label as f64)).collect(),
        })
    }

    pub fn claim_nodes(&self) -> usize {
        self.claim_rows.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(nodes: usize, edges: &[(usize, usize)]) -> GraphInput {
        GraphInput {
            nodes,
            text_dim: 2,
            text: (0..nodes * 2).map(|v| v as f32).collect(),
            structure: vec![[1.0; STRUCT_DIM]; nodes],
            edges: edges.to_vec(),
            mean_edge: [0.5; EdgeFeatures::DIM],
        }
    }

    #[test]
    fn block_diagonal_layout() {
        let a = SampleInput {
            id: "a".into(),
            label: 1,
            evidence: graph(2, &[(0, 1)]),
            claim: graph(1, &[]),
        };
        let b = SampleInput {
            id: "b".into(),
            label: 0,
            evidence: graph(3, &[(2, 0)]),
            claim: graph(2, &[(1, 0)]),
        };
        let batch = Batch::<f64>::new(&[&a, &b], 2, true).unwrap();
        assert_eq!(batch.nodes, 8);
        assert_eq!(&*batch.evidence_sample, &[0, 0, 1, 1, 1]);
        assert_eq!(&*batch.claim_sample, &[0, 1, 1]);
        // 8 self-loops, then one edge per graph in graph order
        assert_eq!(batch.src.len(), 11);
        assert_eq!((batch.src[2], batch.dst[2]), (0, 1));
        assert_eq!((batch.src[6], batch.dst[6]), (4, 2));
        assert_eq!((batch.src[10], batch.dst[10]), (7, 6));
        assert_eq!(batch.pair_query.len(), 2 + 6);
        assert_eq!(&batch.pair_key[..2], &[0, 1]);
        assert_eq!(&batch.pair_query[2..5], &[1, 1, 1]);
        assert_eq!(&batch.pair_key[2..5], &[2, 3, 4]);
        assert_eq!(batch.edge_block.unwrap().shape(), [2, EDGE_BLOCK_DIM]);
    }

    #[test]
    fn empty_side_is_named() {
        let s = SampleInput {
            id: "x".into(),
            label: 0,
            evidence: graph(2, &[]),
            claim: graph(0, &[]),
        };
        let err = Batch::<f32>::new(&[&s], 2, false).unwrap_err();
        assert!(matches!(err, ModelError::EmptyGraph { side: Side::Claim, .. }));
    }
}
