//! Splitting, training, evaluation and ablation sweeps.

mod ablation;
mod adam;
mod metrics;
mod split;
pub mod synthetic;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::model::{ConvVariant, ModelConfig, ModelError};

pub use ablation::{run_ablation, write_ablation_csv, AblationData, AblationRow, ABLATION_CSV_HEADER};
pub use adam::Adam;
pub use metrics::Metrics;
pub use split::split_dataset;
pub use trainer::{evaluate, evaluate_dataset, train, Dataset, EpochRecord, Evaluation, Skipped, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub conv: ConvVariant,
    pub embedding_dim: usize,
    pub use_edge_features: bool,
    pub weighted_node_embeddings: bool,
    /// Fraction of each class used for training.
    pub train_ratio: f64,
    pub hidden: usize,
    pub heads: Vec<usize>,
    /// Samples per parallel forward/backward job within a batch.
    pub sub_batch: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            conv: ConvVariant::Transformer,
            embedding_dim: 768,
            use_edge_features: false,
            weighted_node_embeddings: true,
            train_ratio: 0.85,
            hidden: 1024,
            heads: vec![4, 2],
            sub_batch: 16,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            text_dim: self.embedding_dim,
            hidden: self.hidden,
            heads: self.heads.clone(),
            conv: self.conv,
            weighted_embeddings: self.weighted_node_embeddings,
            edge_features: self.use_edge_features,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.sub_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio must lie strictly between 0 and 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        self.model_config()
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error(transparent)]
    Model(ModelError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Autodiff(a) => TrainError::Numeric(a.to_string()),
            ModelError::Config(m) => TrainError::Config(m),
            ModelError::EmptyGraph { id, side } => TrainError::Data(format!("{side} graph of `{id}` is empty")),
            ModelError::Input { id, message } => TrainError::Data(format!("sample `{id}`: {message}")),
            other => TrainError::Model(other),
        }
    }
}
