//! Structural node and edge features, and label embeddings, over knowledge
//! graphs.

mod edges;
mod pagerank;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use edges::{edge_betweenness, edge_feature_table, edge_features, EdgeFeatures, UNREACHABLE_PATH_LEN};
pub use pagerank::{pagerank, reverse_pagerank, PageRankOptions};

use crate::ingest::{fallback_embed, write_atomic, EmbeddingTable, IngestError};
use crate::kg::KnowledgeGraph;
use crate::parallel::{self, Execution};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeatureError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("edge {0} does not exist")]
    NoSuchEdge(usize),
    #[error("no embedding for node label {0:?}")]
    MissingEmbedding(String),
    #[error("embedding: {0}")]
    Embedding(String),
    #[error("featured graph file: {0}")]
    Format(String),
}

impl From<IngestError> for FeatureError {
    fn from(e: IngestError) -> Self {
        FeatureError::Embedding(e.to_string())
    }
}

/// Index-based directed multigraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Digraph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Self {
        debug_assert!(edges.iter().all(|&(u, v)| u < n && v < n));
        Self { n, edges }
    }

    pub fn from_graph(g: &KnowledgeGraph) -> Self {
        Self::new(g.node_count(), g.edge_indices())
    }

    pub fn reversed(&self) -> Self {
        Self {
            n: self.n,
            edges: self.edges.iter().map(|&(u, v)| (v, u)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeStructFeatures {
    pub in_degree: usize,
    pub out_degree: usize,
    pub total_degree: usize,
    pub pagerank: f64,
    pub reverse_pagerank: f64,
}

impl NodeStructFeatures {
    pub const DIM: usize = 5;

    /// (in, out, total, pagerank, reverse pagerank).
    pub fn to_vec(&self) -> [f64; Self::DIM] {
        [
            self.in_degree as f64,
            self.out_degree as f64,
            self.total_degree as f64,
            self.pagerank,
            self.reverse_pagerank,
        ]
    }
}

pub fn node_struct_features(g: &Digraph) -> Result<Vec<NodeStructFeatures>, FeatureError> {
    let pr = pagerank(g, PageRankOptions::default())?;
    let rpr = reverse_pagerank(g, PageRankOptions::default())?;
    let mut indeg = vec![0; g.n];
    let mut outdeg = vec![0; g.n];
    for &(u, v) in &g.edges {
        outdeg[u] += 1;
        indeg[v] += 1;
    }
    Ok((0..g.n)
        .map(|i| NodeStructFeatures {
            in_degree: indeg[i],
            out_degree: outdeg[i],
            total_degree: indeg[i] + outdeg[i],
            pagerank: pr[i],
            reverse_pagerank: rpr[i],
        })
        .collect())
}

/// Source of node-label vectors.
#[derive(Debug, Clone)]
pub enum LabelEmbedder {
    /// Character-trigram hashing at 384 or 768 dims.
    Fallback { dim: usize },
    /// Precomputed vectors keyed by node label.
    Table(Arc<EmbeddingTable>),
}

impl LabelEmbedder {
    pub fn dim(&self) -> usize {
        match self {
            LabelEmbedder::Fallback { dim } => *dim,
            LabelEmbedder::Table(t) => t.dim(),
        }
    }

    pub fn embed(&self, label: &str) -> Result<Vec<f32>, FeatureError> {
        match self {
            LabelEmbedder::Fallback { dim } => Ok(fallback_embed(label, *dim)?),
            LabelEmbedder::Table(t) => t
                .get(label)
                .map(<[f32]>::to_vec)
                .ok_or_else(|| FeatureError::MissingEmbedding(label.to_string())),
        }
    }
}

/// A graph with everything the classifier reads from it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturedGraph {
    pub graph: KnowledgeGraph,
    /// Edge endpoints as node indices, parallel to `graph.edges`.
    pub edge_index: Vec<(usize, usize)>,
    pub embeddings: Vec<Vec<f32>>,
    pub structure: Vec<NodeStructFeatures>,
    pub edge_features: Option<Vec<EdgeFeatures>>,
}

impl FeaturedGraph {
    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    /// Column means of the 7-dim edge features; zeros when there are no edges
    /// or edge features were not computed.
    pub fn mean_edge_features(&self) -> [f64; EdgeFeatures::DIM] {
        let mut acc = [0.0; EdgeFeatures::DIM];
        if let Some(feats) = &self.edge_features {
            if !feats.is_empty() {
                for f in feats {
                    for (a, v) in acc.iter_mut().zip(f.to_vec()) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= feats.len() as f64);
            }
        }
        acc
    }
}

/// Computes label embeddings and structural features. Edge features are
/// only computed when `with_edge_features` is set.
pub fn featurize(
    graph: &KnowledgeGraph,
    embedder: &LabelEmbedder,
    with_edge_features: bool,
) -> Result<FeaturedGraph, FeatureError> {
    if graph.is_empty() {
        return Err(FeatureError::EmptyGraph);
    }
    let dg = Digraph::from_graph(graph);
    let structure = node_struct_features(&dg)?;
    let embeddings = graph
        .nodes
        .iter()
        .map(|n| embedder.embed(&n.label))
        .collect::<Result<Vec<_>, _>>()?;
    let edge_features = with_edge_features.then(|| edge_feature_table(&dg));
    Ok(FeaturedGraph {
        graph: graph.clone(),
        edge_index: dg.edges,
        embeddings,
        structure,
        edge_features,
    })
}

/// Featurizes many graphs, in parallel when `exec` allows it. Output order
/// matches input order.
pub fn featurize_all(
    graphs: &[KnowledgeGraph],
    embedder: &LabelEmbedder,
    with_edge_features: bool,
    exec: Execution,
) -> Vec<Result<FeaturedGraph, FeatureError>> {
    parallel::map(exec, graphs, |g| featurize(g, embedder, with_edge_features))
}

const FEAT_MAGIC: &[u8; 4] = b"EGFT";

/// Paths of the three files a featured graph is stored in.
pub fn featured_paths(dir: &Path, stem: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{stem}.graph.json")),
        dir.join(format!("{stem}.emb.egtb")),
        dir.join(format!("{stem}.feat.bin")),
    ]
}

/// Writes `<stem>.graph.json`, `<stem>.emb.egtb` (node-id keyed embeddings)
/// and `<stem>.feat.bin`:
///
/// ```text
/// b"EGFT" | u32 version = 1 | u32 nodes | u32 edges | u32 has_edge_features
/// nodes × 5 f32 | (if has_edge_features) edges × 7 f32      (little-endian)
/// ```
pub fn write_featured(dir: &Path, stem: &str, fg: &FeaturedGraph) -> std::io::Result<()> {
    let [graph_p, emb_p, feat_p] = featured_paths(dir, stem);
    write_atomic(&graph_p, fg.graph.to_json().as_bytes())?;

    let mut table = EmbeddingTable::new(fg.embedding_dim());
    for (node, v) in fg.graph.nodes.iter().zip(&fg.embeddings) {
        table
            .insert(node.id.clone(), v.clone())
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    }
    table.write(&emb_p)?;

    let mut out = Vec::new();
    out.extend_from_slice(FEAT_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(fg.node_count() as u32).to_le_bytes());
    out.extend_from_slice(&(fg.graph.edge_count() as u32).to_le_bytes());
    out.extend_from_slice(&u32::from(fg.edge_features.is_some()).to_le_bytes());
    for s in &fg.structure {
        for v in s.to_vec() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(ef) = &fg.edge_features {
        for f in ef {
            for v in f.to_vec() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    write_atomic(&feat_p, &out)
}

/// Raw arrays read back from a `.feat.bin` file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArrays {
    pub node_struct: Vec<[f32; NodeStructFeatures::DIM]>,
    pub edge: Option<Vec<[f32; EdgeFeatures::DIM]>>,
}

pub fn read_feature_arrays(path: &Path) -> Result<FeatureArrays, FeatureError> {
    let bytes = fs::read(path).map_err(|e| FeatureError::Format(format!("{}: {e}", path.display())))?;
    let word = |i: usize| -> Result<u32, FeatureError> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| FeatureError::Format("truncated header".into()))
    };
    if bytes.get(..4) != Some(FEAT_MAGIC.as_slice()) {
        return Err(FeatureError::Format("bad magic, expected EGFT".into()));
    }
    if word(4)? != 1 {
        return Err(FeatureError::Format("unsupported version".into()));
    }
    let (n, e, has_edges) = (word(8)? as usize, word(12)? as usize, word(16)? == 1);
    let expected = 20 + 4 * (n * 5 + if has_edges { e * 7 } else { 0 });
    if bytes.len() != expected {
        return Err(FeatureError::Format(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let floats: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let node_struct = floats[..n * 5]
        .chunks_exact(5)
        .map(|c| [c[0], c[1], c[2], c[3], c[4]])
        .collect();
    let edge = has_edges.then(|| {
        floats[n * 5..]
            .chunks_exact(7)
            .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5], c[6]])
            .collect()
    });
    Ok(FeatureArrays { node_struct, edge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Edge, EdgeType, Node, NodeType, RuleId};

    fn graph(n: usize, edges: &[(usize, usize)]) -> KnowledgeGraph {
        KnowledgeGraph {
            nodes: (0..n)
                .map(|i| Node {
                    id: format!("n{i}"),
                    label: format!("node {i}"),
                    node_type: NodeType::Entity,
                })
                .collect(),
            edges: edges
                .iter()
                .map(|&(u, v)| Edge {
                    src: format!("n{u}"),
                    dst: format!("n{v}"),
                    edge_type: EdgeType::Targets,
                    rule: RuleId::DobjTargets,
                })
                .collect(),
        }
    }

    #[test]
    fn degree_counts() {
        // n0 receives from n1 and n2 and sends to n3.
        let dg = Digraph::new(4, vec![(1, 0), (2, 0), (0, 3)]);
        let f = node_struct_features(&dg).unwrap();
        assert_eq!((f[0].in_degree, f[0].out_degree, f[0].total_degree), (2, 1, 3));
    }

    #[test]
    fn isolated_pair() {
        let f = node_struct_features(&Digraph::new(2, vec![])).unwrap();
        assert_eq!(f[0].to_vec(), [0.0, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn featurize_empty_graph_errors() {
        let e = featurize(&KnowledgeGraph::default(), &LabelEmbedder::Fallback { dim: 384 }, false);
        assert_eq!(e.unwrap_err(), FeatureError::EmptyGraph);
    }

    #[test]
    fn edge_features_are_opt_in() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let emb = LabelEmbedder::Fallback { dim: 384 };
        let without = featurize(&g, &emb, false).unwrap();
        let with = featurize(&g, &emb, true).unwrap();
        assert!(without.edge_features.is_none());
        assert_eq!(with.edge_features.as_ref().unwrap().len(), 2);
        assert_eq!(with.structure, without.structure);
        assert_eq!(with.embeddings, without.embeddings);
        assert_eq!(without.mean_edge_features(), [0.0; 7]);
    }

    #[test]
    fn table_embedder_requires_every_label() {
        let mut t = EmbeddingTable::new(2);
        t.insert("node 0", vec![1.0, 0.0]).unwrap();
        let emb = LabelEmbedder::Table(Arc::new(t));
        assert_eq!(
            featurize(&graph(2, &[]), &emb, false).unwrap_err(),
            FeatureError::MissingEmbedding("node 1".into())
        );
        assert!(featurize(&graph(1, &[]), &emb, false).is_ok());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let fg = featurize(&g, &LabelEmbedder::Fallback { dim: 384 }, true).unwrap();
        write_featured(dir.path(), "s1.claim", &fg).unwrap();
        let [gp, ep, fp] = featured_paths(dir.path(), "s1.claim");
        let g2 = KnowledgeGraph::from_json(&fs::read_to_string(gp).unwrap()).unwrap();
        assert_eq!(g2, g);
        let table = crate::ingest::load_embedding_table(&ep).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.get("n1").unwrap(), fg.embeddings[1].as_slice());
        let arrays = read_feature_arrays(&fp).unwrap();
        assert_eq!(arrays.node_struct.len(), 3);
        assert_eq!(arrays.edge.as_ref().unwrap().len(), 3);
        assert_eq!(arrays.node_struct[1][0], 1.0);
        assert_eq!(arrays.edge.unwrap()[2][5], 2.0);
    }
}
