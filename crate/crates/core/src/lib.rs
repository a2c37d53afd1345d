//! Evidence-graph veracity classification: CoNLL-U ingestion, evidence
//! ranking, knowledge-graph construction, graph features, a small autodiff
//! engine, the graph-attention classifier and its training harness.

pub mod autodiff;
pub mod config;
pub mod features;
pub mod ingest;
pub mod kg;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod ranking;
pub mod train;
