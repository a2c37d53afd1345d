//! Graph-attention veracity classifier.
//!
//! Node features are projected into a common space, passed through two
//! attention convolutions, gated by a node scorer, cross-attended (claim
//! nodes query evidence nodes) and mean-pooled into a sigmoid head.

mod batch;
mod check;
mod checkpoint;
mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;

pub use batch::{Batch, GraphInput, SampleInput, Side};
pub use check::check_gradients;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use forward::{AttentionTrace, ForwardOutput, LossAndGrads};
pub use params::{Classifier, ConvParams, HeadInit, Init, Layout, ParamSpec, ProjectorParams};

/// Node structural feature width (degrees and both PageRanks).
pub const STRUCT_DIM: usize = 5;
/// Edge-feature block appended to the head input when enabled (evidence ∥ claim).
pub const EDGE_BLOCK_DIM: usize = 14;
/// Parameter total reported for the reference architecture.
pub const REFERENCE_PARAM_COUNT: usize = 10_724_391;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConvVariant {
    Gat,
    GatV2,
    #[default]
    Transformer,
}

impl ConvVariant {
    pub const ALL: [ConvVariant; 3] = [ConvVariant::Gat, ConvVariant::GatV2, ConvVariant::Transformer];

    pub fn as_str(self) -> &'static str {
        match self {
            ConvVariant::Gat => "gat",
            ConvVariant::GatV2 => "gatv2",
            ConvVariant::Transformer => "transformer",
        }
    }
}

impl fmt::Display for ConvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConvVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gat" | "gatconv" => Ok(ConvVariant::Gat),
            "gatv2" | "gatv2conv" => Ok(ConvVariant::GatV2),
            "transformer" | "transformerconv" => Ok(ConvVariant::Transformer),
            other => Err(format!("unknown conv variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub text_dim: usize,
    pub hidden: usize,
    /// Attention heads per conv layer; its length is the layer count.
    pub heads: Vec<usize>,
    pub conv: ConvVariant,
    /// Learnable α, β on the projected feature groups.
    pub weighted_embeddings: bool,
    pub edge_features: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            text_dim: 768,
            hidden: 1024,
            heads: vec![4, 2],
            conv: ConvVariant::Transformer,
            weighted_embeddings: true,
            edge_features: false,
        }
    }
}

impl ModelConfig {
    pub fn common_dim(&self) -> usize {
        self.text_dim + STRUCT_DIM
    }

    pub fn layers(&self) -> usize {
        self.heads.len()
    }

    pub fn head_input_dim(&self) -> usize {
        3 * self.hidden + if self.edge_features { EDGE_BLOCK_DIM } else { 0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.text_dim == 0 || self.hidden == 0 || self.heads.is_empty() {
            return Err(ModelError::Config("dimensions and layer count must be positive".into()));
        }
        if let Some(&h) = self.heads.iter().find(|&&h| h == 0 || !self.hidden.is_multiple_of(h)) {
            return Err(ModelError::Config(format!(
                "{h} heads do not divide hidden size {}",
                self.hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{side} graph of sample `{id}` is empty")]
    EmptyGraph { id: String, side: Side },
    #[error("sample `{id}`: {message}")]
    Input { id: String, message: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
