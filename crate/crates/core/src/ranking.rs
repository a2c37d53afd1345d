//! Ranking retrieved documents against the claim image and merging the best
//! ones into a single evidence document.

use std::cmp::Ordering;

use crate::ingest::ParsedDocument;

/// Number of documents kept as evidence.
pub const DEFAULT_TOP_K: usize = 7;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RankError {
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("candidate {doc_id:?} has dim {found}, image embedding has dim {expected}")]
    DimMismatch {
        doc_id: String,
        expected: usize,
        found: usize,
    },
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, RankError> {
    if a.len() != b.len() {
        return Err(RankError::LengthMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(RankError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceCandidate {
    pub doc_id: String,
    pub embedding: Vec<f32>,
    pub similarity: Option<f64>,
}

impl EvidenceCandidate {
    pub fn new(doc_id: impl Into<String>, embedding: Vec<f32>) -> Self {
        Self {
            doc_id: doc_id.into(),
            embedding,
            similarity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEvidence {
    /// Descending similarity, ties by ascending doc id.
    pub doc_ids: Vec<String>,
    pub similarities: Vec<f64>,
}

/// Scores every candidate against the image embedding and keeps the top `k`.
pub fn rank_evidence(
    image_emb: &[f32],
    candidates: &mut [EvidenceCandidate],
    k: usize,
) -> Result<RankedEvidence, RankError> {
    if candidates.is_empty() {
        return Err(RankError::NoCandidates);
    }
    if k == 0 {
        return Err(RankError::ZeroK);
    }
    for c in candidates.iter() {
        if c.embedding.len() != image_emb.len() {
            return Err(RankError::DimMismatch {
                doc_id: c.doc_id.clone(),
                expected: image_emb.len(),
                found: c.embedding.len(),
            });
        }
    }
    for c in candidates.iter_mut() {
        c.similarity = Some(cosine_similarity(image_emb, &c.embedding)?);
    }
    let mut order: Vec<&EvidenceCandidate> = candidates.iter().collect();
    order.sort_by(|a, b| {
        let (sa, sb) = (a.similarity.unwrap_or(f64::MIN), b.similarity.unwrap_or(f64::MIN));
        sb.partial_cmp(&sa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    order.truncate(k);
    Ok(RankedEvidence {
        doc_ids: order.iter().map(|c| c.doc_id.clone()).collect(),
        similarities: order.iter().filter_map(|c| c.similarity).collect(),
    })
}

/// Appends the sentence lists of `docs` in order. The merged id lists the
/// constituent ids joined by `+`.
pub fn concatenate_evidence(docs: &[&ParsedDocument]) -> ParsedDocument {
    let mut out = ParsedDocument {
        doc_id: docs.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>().join("+"),
        ..Default::default()
    };
    for doc in docs {
        let offset = out.sentences.len();
        out.sentences.extend(doc.sentences.iter().cloned());
        out.entity_spans.extend(doc.entity_spans.iter().map(|s| {
            let mut s = s.clone();
            s.sentence += offset;
            s
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_conllu;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_similarity(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(RankError::ZeroNorm));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn top_two_of_three() {
        // Image (1,0). cos = x / |v|: a=(0.9, sqrt(1-0.81)) -> 0.9,
        // b=(0.1, sqrt(0.99)) -> 0.1, c=(0.5, sqrt(0.75)) -> 0.5.
        let mut cands = vec![
            EvidenceCandidate::new("first", vec![0.9, 0.19f32.sqrt()]),
            EvidenceCandidate::new("second", vec![0.1, 0.99f32.sqrt()]),
            EvidenceCandidate::new("third", vec![0.5, 0.75f32.sqrt()]),
        ];
        let r = rank_evidence(&[1.0, 0.0], &mut cands, 2).unwrap();
        assert_eq!(r.doc_ids, vec!["first", "third"]);
        assert!((r.similarities[0] - 0.9).abs() < 1e-6);
        assert!((r.similarities[1] - 0.5).abs() < 1e-6);
        assert!((cands[1].similarity.unwrap() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn k_larger_than_pool() {
        let mut cands: Vec<_> = (0..4)
            .map(|i| EvidenceCandidate::new(format!("d{i}"), vec![1.0, i as f32]))
            .collect();
        let r = rank_evidence(&[1.0, 0.0], &mut cands, 7).unwrap();
        assert_eq!(r.doc_ids, vec!["d0", "d1", "d2", "d3"]);
    }

    #[test]
    fn ties_by_doc_id() {
        let mut cands = vec![
            EvidenceCandidate::new("zeta", vec![1.0, 1.0]),
            EvidenceCandidate::new("alpha", vec![1.0, 1.0]),
        ];
        let r = rank_evidence(&[0.3, 0.7], &mut cands, 2).unwrap();
        assert_eq!(r.doc_ids, vec!["alpha", "zeta"]);
    }

    #[test]
    fn dim_mismatch_and_empty() {
        let mut cands = vec![EvidenceCandidate::new("a", vec![1.0, 0.0, 0.0])];
        assert!(matches!(
            rank_evidence(&[1.0, 0.0], &mut cands, 1),
            Err(RankError::DimMismatch { .. })
        ));
        assert_eq!(rank_evidence(&[1.0], &mut [], 1), Err(RankError::NoCandidates));
    }

    fn doc(id: &str, sentences: usize) -> ParsedDocument {
        let mut text = String::new();
        for i in 0..sentences {
            text.push_str(&format!("1\tw{i}\tw{i}\tPROPN\t_\t_\t0\troot\t_\tNER=B-PERSON\n\n"));
        }
        let mut d = parse_conllu(&text).unwrap();
        d.doc_id = id.into();
        d
    }

    #[test]
    fn concatenation_keeps_order() {
        let (a, b) = (doc("a", 2), doc("b", 3));
        let merged = concatenate_evidence(&[&a, &b]);
        assert_eq!(merged.sentences.len(), 5);
        assert_eq!(merged.doc_id, "a+b");
        assert_eq!(merged.sentences[2][0].form, "w0");
        assert_eq!(merged.entity_spans[4].sentence, 4);
        assert_eq!(merged.span_text(&merged.entity_spans[2]), "w0");
    }

    #[test]
    fn concatenation_identity_and_empty() {
        let a = doc("a", 2);
        let single = concatenate_evidence(&[&a]);
        assert_eq!(single, a);
        let empty = concatenate_evidence(&[]);
        assert!(empty.sentences.is_empty());
    }
}
