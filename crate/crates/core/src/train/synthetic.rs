//! Synthetic claim/evidence pairs with a known rule: a sample is positive
//! exactly when every claim label also labels an evidence node.
//!
//! Negative claims always carry at least one label from a distractor pool
//! that never occurs in evidence, so the classes are separable from the
//! claim graph alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, TrainError};
use crate::features::{featurize_all, LabelEmbedder};
use crate::kg::{EdgeType, GraphBuilder, KnowledgeGraph, NodeType, RuleId};
use crate::model::{GraphInput, SampleInput};
use crate::parallel::Execution;

const CORE: [&str; 48] = [
    "river",
    "bridge",
    "mayor",
    "council",
    "flood",
    "harbor",
    "station",
    "museum",
    "festival",
    "minister",
    "election",
    "market",
    "storm",
    "village",
    "airport",
    "protest",
    "school",
    "hospital",
    "factory",
    "stadium",
    "senator",
    "parade",
    "castle",
    "forest",
    "tunnel",
    "lighthouse",
    "summit",
    "treaty",
    "volcano",
    "glacier",
    "cathedral",
    "harvest",
    "convoy",
    "strike",
    "ferry",
    "embassy",
    "library",
    "orchestra",
    "rally",
    "border",
    "pipeline",
    "satellite",
    "reservoir",
    "monument",
    "garrison",
    "quarry",
    "canal",
    "vineyard",
];

/// Distractors share a leading word, so their hashed embeddings share a
/// common component.
const DISTRACTORS: [&str; 16] = [
    "phantom vortel",
    "phantom mandrin",
    "phantom zephor",
    "phantom talvex",
    "phantom quorin",
    "phantom blistra",
    "phantom nuvex",
    "phantom crandel",
    "phantom oskari",
    "phantom pelvane",
    "phantom strimo",
    "phantom julvar",
    "phantom wendrix",
    "phantom holtaq",
    "phantom rimbel",
    "phantom faxoni",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub label: u8,
    pub evidence: KnowledgeGraph,
    pub claim: KnowledgeGraph,
}

fn graph(rng: &mut ChaCha8Rng, labels: &[&str], chain: bool) -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    for (i, l) in labels.iter().enumerate() {
        let t = if i % 2 == 0 { NodeType::Entity } else { NodeType::Event };
        b.add_node(l.to_string(), l.to_string(), t);
    }
    for j in 1..labels.len() {
        let parent = if chain { j - 1 } else { rng.gen_range(0..j) };
        let (edge, rule) = if rng.gen_bool(0.5) {
            (EdgeType::Performs, RuleId::NsubjPerforms)
        } else {
            (EdgeType::Targets, RuleId::DobjTargets)
        };
        let (src, dst) = if rng.gen_bool(0.5) { (parent, j) } else { (j, parent) };
        b.add_edge(labels[src], labels[dst], edge, rule);
    }
    b.finish()
}

/// `n` samples with alternating labels (even indices positive).
pub fn generate(n: usize, seed: u64) -> Vec<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = u8::from(i % 2 == 0);
            let k = rng.gen_range(5..=8);
            let evidence: Vec<&str> = CORE.choose_multiple(&mut rng, k).copied().collect();
            let m = rng.gen_range(2..=4);
            let claim: Vec<&str> = if label == 1 {
                evidence.choose_multiple(&mut rng, m).copied().collect()
            } else {
                let d = rng.gen_range(1..m);
                let mut c: Vec<&str> = DISTRACTORS.choose_multiple(&mut rng, d).copied().collect();
                c.extend(evidence.choose_multiple(&mut rng, m - d).copied());
                c.shuffle(&mut rng);
                c
            };
            SyntheticSample {
                id: format!("syn{i:04}"),
                label,
                evidence: graph(&mut rng, &evidence, false),
                claim: graph(&mut rng, &claim, true),
            }
        })
        .collect()
}

/// Featurizes the samples with hashed label embeddings of width `dim`.
/// Edge features are always computed.
pub fn to_dataset(samples: &[SyntheticSample], dim: usize, exec: Execution) -> Result<Dataset, TrainError> {
    let embedder = LabelEmbedder::Fallback { dim };
    let graphs: Vec<KnowledgeGraph> = samples
        .iter()
        .flat_map(|s| [s.evidence.clone(), s.claim.clone()])
        .collect();
    let featured = featurize_all(&graphs, &embedder, true, exec);
    let mut inputs = Vec::with_capacity(samples.len());
    for (s, pair) in samples.iter().zip(featured.chunks(2)) {
        let ev = pair[0]
            .as_ref()
            .map_err(|e| TrainError::Data(format!("{}: {e}", s.id)))?;
        let cl = pair[1]
            .as_ref()
            .map_err(|e| TrainError::Data(format!("{}: {e}", s.id)))?;
        inputs.push(SampleInput {
            id: s.id.clone(),
            label: s.label,
            evidence: GraphInput::from_featured(ev),
            claim: GraphInput::from_featured(cl),
        });
    }
    Dataset::from_inputs(inputs, dim)
}

/// Generates and featurizes in one call.
pub fn dataset(n: usize, seed: u64, dim: usize, exec: Execution) -> Result<Dataset, TrainError> {
    to_dataset(&generate(n, seed), dim, exec)
}
