//! Typed knowledge graphs built from dependency-annotated text.

mod builder;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use builder::{build_graph, canonical_id, extract_edges, extract_nodes, node_type_for_ner, GraphBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeType {
    Entity,
    Event,
    /// No current rule emits STATE nodes; the variant keeps the file format stable.
    State,
    Location,
    Time,
    Attribute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeType {
    Performs,
    Experiences,
    Targets,
    LocatedIn,
    HasState,
    SameAs,
}

/// The extraction rule that produced an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleId {
    /// nsubj child of a verb → PERFORMS (subject → verb).
    NsubjPerforms,
    /// nsubjpass child of a verb → EXPERIENCES (verb → subject).
    NsubjpassExperiences,
    /// dobj child of a verb → TARGETS.
    DobjTargets,
    /// pobj under a non-locative prep of a verb → TARGETS.
    PobjTargets,
    /// in/at/on prep under a verb → LOCATED_IN (verb → pobj).
    VerbPrepLocatedIn,
    /// "in" prep under a non-verb node → LOCATED_IN (head → pobj).
    HeadPrepInLocatedIn,
    /// compound whose own node differs from its head's → HAS_STATE.
    CompoundHasState,
    /// explicitly linked co-referent nodes → SAME_AS.
    Coreference,
}

macro_rules! string_enum {
    ($ty:ty { $($variant:ident => $s:literal),* $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $(Self::$variant => $s),* }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok(Self::$variant),)*
                    other => Err(format!("unknown {} {other:?}", stringify!($ty))),
                }
            }
        }
    };
}

string_enum!(NodeType {
    Entity => "ENTITY",
    Event => "EVENT",
    State => "STATE",
    Location => "LOCATION",
    Time => "TIME",
    Attribute => "ATTRIBUTE",
});

string_enum!(EdgeType {
    Performs => "PERFORMS",
    Experiences => "EXPERIENCES",
    Targets => "TARGETS",
    LocatedIn => "LOCATED_IN",
    HasState => "HAS_STATE",
    SameAs => "SAME_AS",
});

string_enum!(RuleId {
    NsubjPerforms => "nsubj-performs",
    NsubjpassExperiences => "nsubjpass-experiences",
    DobjTargets => "dobj-targets",
    PobjTargets => "pobj-targets",
    VerbPrepLocatedIn => "verb-prep-located-in",
    HeadPrepInLocatedIn => "head-prep-in-located-in",
    CompoundHasState => "compound-has-state",
    Coreference => "coreference",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub label: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    #[serde(rename = "type")]
    pub edge_type: EdgeType,
    pub rule: RuleId,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("edge endpoint {0:?} is not a node")]
    DanglingEdge(String),
    #[error("SAME_AS self-loop on {0:?}")]
    SameAsSelfLoop(String),
    #[error("graph json: {0}")]
    Json(String),
}

/// Directed multigraph: parallel edges of different types may coexist, but
/// an identical (src, dst, type) triple is stored once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl KnowledgeGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self) -> HashMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect()
    }

    /// Edges as (source index, target index) pairs, in edge order.
    pub fn edge_indices(&self) -> Vec<(usize, usize)> {
        let idx = self.node_index();
        self.edges
            .iter()
            .map(|e| (idx[e.src.as_str()], idx[e.dst.as_str()]))
            .collect()
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let mut seen = HashMap::new();
        for n in &self.nodes {
            if seen.insert(n.id.as_str(), ()).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        for e in &self.edges {
            for end in [&e.src, &e.dst] {
                if !seen.contains_key(end.as_str()) {
                    return Err(GraphError::DanglingEdge(end.clone()));
                }
            }
            if e.edge_type == EdgeType::SameAs && e.src == e.dst {
                return Err(GraphError::SameAsSelfLoop(e.src.clone()));
            }
        }
        Ok(())
    }

    /// Stable JSON: `{"nodes":[{"id","label","type"}],"edges":[{"src","dst","type","rule"}]}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let g: KnowledgeGraph = serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    /// Reorders nodes by `perm` (new position i holds old node `perm[i]`).
    /// Edge order is unchanged; only node order moves.
    pub fn permute_nodes(&self, perm: &[usize]) -> Self {
        Self {
            nodes: perm.iter().map(|&i| self.nodes[i].clone()).collect(),
            edges: self.edges.clone(),
        }
    }
}
