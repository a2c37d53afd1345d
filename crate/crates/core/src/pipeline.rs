//! File-level stages behind the command-line tool: manifest checks, evidence
//! ranking, graph construction, featurization and dataset loading.
//!
//! A graph directory holds `<id>.claim.json`, `<id>.evidence.json` and a
//! `samples.jsonl` index. A feature directory holds, per graph stem, the
//! files written by [`write_featured`] plus a copy of the index.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::features::{featured_paths, featurize, read_feature_arrays, write_featured, LabelEmbedder};
use crate::ingest::{
    load_document, load_embedding_table, write_atomic, DatasetManifest, EmbeddingTable, IngestError, ManifestRecord,
    ParsedDocument,
};
use crate::kg::{build_graph, EdgeType, GraphBuilder, KnowledgeGraph, NodeType, RuleId};
use crate::model::{GraphInput, ModelError, SampleInput};
use crate::parallel::{self, Execution};
use crate::ranking::{concatenate_evidence, rank_evidence, EvidenceCandidate};
use crate::train::{Dataset, TrainError};

pub const SAMPLES_INDEX: &str = "samples.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Numeric(_) => 4,
            PipelineError::Io(_) => 1,
        }
    }

    fn write(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => PipelineError::Config(m),
            TrainError::Data(m) => PipelineError::Data(m),
            TrainError::Numeric(m) => PipelineError::Numeric(m),
            TrainError::Model(m) => m.into(),
            TrainError::Io(e) => PipelineError::Io(e.to_string()),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => PipelineError::Config(m),
            ModelError::Autodiff(a) => PipelineError::Numeric(a.to_string()),
            ModelError::Io { .. } => PipelineError::Io(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

/// One line of `samples.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub label: u8,
    /// Graph stem of the claim graph.
    pub claim: String,
    /// Graph stem of the concatenated evidence graph.
    pub evidence: String,
}

fn check_id(id: &str) -> Result<(), PipelineError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(PipelineError::Data(format!(
            "sample id {id:?} is not usable as a file name (allowed: A-Z a-z 0-9 - _ .)"
        )))
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn missing(manifest: &DatasetManifest) -> Result<(), PipelineError> {
    let missing = manifest.missing_files();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(IngestError::MissingFiles(missing).into())
    }
}

/// Parses every document the manifest references once. All parse failures
/// are reported together.
fn load_documents(
    manifest: &DatasetManifest,
    exec: Execution,
) -> Result<BTreeMap<PathBuf, ParsedDocument>, PipelineError> {
    missing(manifest)?;
    let mut paths: Vec<PathBuf> = manifest
        .records
        .iter()
        .flat_map(|r| std::iter::once(&r.claim_doc).chain(&r.evidence_docs))
        .map(|r| manifest.resolve(r))
        .collect();
    paths.sort();
    paths.dedup();
    let parsed = parallel::map(exec, &paths, |p| load_document(p));
    let mut docs = BTreeMap::new();
    let mut errors = Vec::new();
    for (p, r) in paths.into_iter().zip(parsed) {
        match r {
            Ok(d) => {
                docs.insert(p, d);
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    if errors.is_empty() {
        Ok(docs)
    } else {
        Err(PipelineError::Data(errors.join("\n")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub records: usize,
    pub documents: usize,
    pub sentences: usize,
    pub tokens: usize,
    pub entities: usize,
}

/// Checks that every referenced document exists and parses.
pub fn ingest(manifest: &DatasetManifest, exec: Execution) -> Result<IngestReport, PipelineError> {
    let docs = load_documents(manifest, exec)?;
    Ok(IngestReport {
        records: manifest.records.len(),
        documents: docs.len(),
        sentences: docs.values().map(|d| d.sentences.len()).sum(),
        tokens: docs.values().map(ParsedDocument::token_count).sum(),
        entities: docs.values().map(|d| d.entity_spans.len()).sum(),
    })
}

/// Ranking outcome for one manifest record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRecord {
    pub id: String,
    pub doc_ids: Vec<String>,
    pub similarities: Vec<f64>,
}

/// Keeps the `k` evidence documents closest to each record's image.
///
/// Images are looked up by `image_key` (else the record id); documents by
/// their manifest reference, else their file stem. Document references in
/// the returned manifest are absolute so it can be written anywhere.
pub fn rank_manifest(
    manifest: &DatasetManifest,
    images: &EmbeddingTable,
    texts: &EmbeddingTable,
    k: usize,
) -> Result<(DatasetManifest, Vec<RankRecord>), PipelineError> {
    if images.dim() != texts.dim() {
        return Err(PipelineError::Config(format!(
            "image table dim {} differs from text table dim {}",
            images.dim(),
            texts.dim()
        )));
    }
    missing(manifest)?;
    let absolute = |r: &str| -> Result<String, PipelineError> {
        let p = manifest.resolve(r);
        fs::canonicalize(&p)
            .map(|p| p.to_string_lossy().into_owned())
            .map_err(|e| PipelineError::Data(format!("{}: {e}", p.display())))
    };
    let mut records = Vec::with_capacity(manifest.records.len());
    let mut ranks = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let key = rec.image_key.as_deref().unwrap_or(&rec.id);
        let image = images
            .get(key)
            .ok_or_else(|| PipelineError::Data(format!("no image embedding for {key:?}")))?;
        let mut candidates = Vec::with_capacity(rec.evidence_docs.len());
        for doc in &rec.evidence_docs {
            let stem = Path::new(doc).file_stem().and_then(|s| s.to_str()).unwrap_or(doc);
            let v = texts
                .get(doc)
                .or_else(|| texts.get(stem))
                .ok_or_else(|| PipelineError::Data(format!("no text embedding for {doc:?}")))?;
            candidates.push(EvidenceCandidate::new(doc.clone(), v.to_vec()));
        }
        let ranked = if candidates.is_empty() {
            RankRecord {
                id: rec.id.clone(),
                doc_ids: Vec::new(),
                similarities: Vec::new(),
            }
        } else {
            let r = rank_evidence(image, &mut candidates, k)
                .map_err(|e| PipelineError::Data(format!("sample {:?}: {e}", rec.id)))?;
            RankRecord {
                id: rec.id.clone(),
                doc_ids: r.doc_ids,
                similarities: r.similarities,
            }
        };
        records.push(ManifestRecord {
            claim_doc: absolute(&rec.claim_doc)?,
            evidence_docs: ranked.doc_ids.iter().map(|d| absolute(d)).collect::<Result<_, _>>()?,
            ..rec.clone()
        });
        ranks.push(ranked);
    }
    Ok((
        DatasetManifest {
            base_dir: manifest.base_dir.clone(),
            records,
        },
        ranks,
    ))
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), PipelineError> {
    write_atomic(path, jsonl(&manifest.records).as_bytes()).map_err(|e| PipelineError::write(path, e))
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), PipelineError> {
    write_atomic(path, jsonl(items).as_bytes()).map_err(|e| PipelineError::write(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BuildSummary {
    pub samples: usize,
    /// Samples with at least one empty graph.
    pub skipped: usize,
    pub nodes: usize,
    pub edges: usize,
}

/// Builds the claim graph and the concatenated evidence graph of every
/// record and writes them, with the sample index, into `out`.
pub fn build_graphs(manifest: &DatasetManifest, out: &Path, exec: Execution) -> Result<BuildSummary, PipelineError> {
    for rec in &manifest.records {
        check_id(&rec.id)?;
    }
    let docs = load_documents(manifest, exec)?;
    let graphs = parallel::map(exec, &manifest.records, |rec| {
        let claim = build_graph(&docs[&manifest.resolve(&rec.claim_doc)]);
        let evidence: Vec<&ParsedDocument> = rec.evidence_docs.iter().map(|d| &docs[&manifest.resolve(d)]).collect();
        (claim, build_graph(&concatenate_evidence(&evidence)))
    });
    fs::create_dir_all(out).map_err(|e| PipelineError::write(out, e))?;
    let mut summary = BuildSummary::default();
    let mut index = Vec::with_capacity(graphs.len());
    for (rec, (claim, evidence)) in manifest.records.iter().zip(graphs) {
        let entry = SampleEntry {
            id: rec.id.clone(),
            label: rec.label,
            claim: format!("{}.claim", rec.id),
            evidence: format!("{}.evidence", rec.id),
        };
        for (stem, g) in [(&entry.claim, &claim), (&entry.evidence, &evidence)] {
            let path = out.join(format!("{stem}.json"));
            write_atomic(&path, g.to_json().as_bytes()).map_err(|e| PipelineError::write(&path, e))?;
            summary.nodes += g.node_count();
            summary.edges += g.edge_count();
        }
        summary.samples += 1;
        if claim.is_empty() || evidence.is_empty() {
            summary.skipped += 1;
        }
        index.push(entry);
    }
    write_jsonl(&index, &out.join(SAMPLES_INDEX))?;
    Ok(summary)
}

pub fn read_index(dir: &Path) -> Result<Vec<SampleEntry>, PipelineError> {
    let path = dir.join(SAMPLES_INDEX);
    let text = read_text(&path)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let e: SampleEntry = serde_json::from_str(line)
            .map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        check_id(&e.id)?;
        entries.push(e);
    }
    if entries.is_empty() {
        return Err(PipelineError::Data(format!("{} lists no samples", path.display())));
    }
    Ok(entries)
}

pub fn read_graph(path: &Path) -> Result<KnowledgeGraph, PipelineError> {
    KnowledgeGraph::from_json(&read_text(path)?).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

/// Every distinct node label in a graph directory, as `(label, label)`
/// pairs for the label-embedding exporter.
pub fn label_keys(graphs: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    let mut labels = std::collections::BTreeSet::new();
    for e in read_index(graphs)? {
        for stem in [&e.claim, &e.evidence] {
            let g = read_graph(&graphs.join(format!("{stem}.json")))?;
            labels.extend(g.nodes.into_iter().map(|n| n.label));
        }
    }
    Ok(labels.into_iter().map(|l| (l.clone(), l)).collect())
}

/// Every distinct evidence reference of the manifest with its plain text,
/// for the document-embedding exporter. Keys are the references exactly as
/// written, which is what ranking looks up first.
pub fn document_keys(manifest: &DatasetManifest, exec: Execution) -> Result<Vec<(String, String)>, PipelineError> {
    let docs = load_documents(manifest, exec)?;
    let mut out = BTreeMap::new();
    for rec in &manifest.records {
        for d in &rec.evidence_docs {
            out.entry(d.clone())
                .or_insert_with(|| docs[&manifest.resolve(d)].plain_text());
        }
    }
    Ok(out.into_iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FeatureSummary {
    pub graphs: usize,
    pub empty: usize,
}

/// Featurizes every graph listed in `graphs/samples.jsonl` into `out`.
/// Edge features are always stored so one feature directory serves every
/// model configuration. Empty graphs only get their graph file.
pub fn featurize_dir(
    graphs: &Path,
    out: &Path,
    embedder: &LabelEmbedder,
    exec: Execution,
) -> Result<FeatureSummary, PipelineError> {
    let index = read_index(graphs)?;
    let stems: Vec<&str> = index
        .iter()
        .flat_map(|e| [e.claim.as_str(), e.evidence.as_str()])
        .collect();
    let loaded = stems
        .iter()
        .map(|s| read_graph(&graphs.join(format!("{s}.json"))))
        .collect::<Result<Vec<_>, _>>()?;
    let featured = parallel::map(exec, &loaded, |g| {
        if g.is_empty() {
            Ok(None)
        } else {
            featurize(g, embedder, true).map(Some)
        }
    });
    fs::create_dir_all(out).map_err(|e| PipelineError::write(out, e))?;
    let mut summary = FeatureSummary::default();
    for ((stem, g), f) in stems.iter().zip(&loaded).zip(featured) {
        let f = f.map_err(|e| PipelineError::Data(format!("graph {stem}: {e}")))?;
        match f {
            Some(fg) => write_featured(out, stem, &fg).map_err(|e| PipelineError::write(out, e))?,
            None => {
                let [path, ..] = featured_paths(out, stem);
                write_atomic(&path, g.to_json().as_bytes()).map_err(|e| PipelineError::write(&path, e))?;
                summary.empty += 1;
            }
        }
        summary.graphs += 1;
    }
    write_jsonl(&index, &out.join(SAMPLES_INDEX))?;
    Ok(summary)
}

fn empty_input(text_dim: usize) -> GraphInput {
    GraphInput {
        nodes: 0,
        text_dim,
        text: Vec::new(),
        structure: Vec::new(),
        edges: Vec::new(),
        mean_edge: Default::default(),
    }
}

fn load_input(dir: &Path, stem: &str, text_dim: usize) -> Result<GraphInput, PipelineError> {
    let [graph_p, emb_p, feat_p] = featured_paths(dir, stem);
    let graph = read_graph(&graph_p)?;
    if graph.is_empty() {
        return Ok(empty_input(text_dim));
    }
    let table = load_embedding_table(&emb_p)?;
    let arrays = read_feature_arrays(&feat_p).map_err(|e| PipelineError::Data(e.to_string()))?;
    GraphInput::from_parts(&graph, &table, &arrays).map_err(|e| PipelineError::Data(format!("graph {stem}: {e}")))
}

/// Loads a feature directory. Samples with an empty graph are skipped; an
/// embedding width other than `text_dim` is a config error.
pub fn load_dataset(dir: &Path, text_dim: usize, exec: Execution) -> Result<Dataset, PipelineError> {
    let index = read_index(dir)?;
    let inputs = parallel::map(exec, &index, |e| -> Result<SampleInput, PipelineError> {
        Ok(SampleInput {
            id: e.id.clone(),
            label: e.label,
            evidence: load_input(dir, &e.evidence, text_dim)?,
            claim: load_input(dir, &e.claim, text_dim)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    if let Some(found) = inputs
        .iter()
        .flat_map(|s| [&s.evidence, &s.claim])
        .find(|g| g.nodes > 0 && g.text_dim != text_dim)
    {
        return Err(PipelineError::Config(format!(
            "features in {} have embedding dim {}, config expects {text_dim}",
            dir.display(),
            found.text_dim
        )));
    }
    Ok(Dataset::from_inputs(inputs, text_dim)?)
}

/// Turns a claim graph and an evidence graph into one model input.
pub fn pair_input(
    claim: &KnowledgeGraph,
    evidence: &KnowledgeGraph,
    embedder: &LabelEmbedder,
) -> Result<SampleInput, PipelineError> {
    let side = |g: &KnowledgeGraph, what: &str| {
        featurize(g, embedder, true)
            .map(|f| GraphInput::from_featured(&f))
            .map_err(|e| PipelineError::Data(format!("{what} graph: {e}")))
    };
    Ok(SampleInput {
        id: "input".into(),
        label: 0,
        evidence: side(evidence, "evidence")?,
        claim: side(claim, "claim")?,
    })
}

/// A fixed sample with a 5-node evidence graph and a 4-node claim graph.
pub fn tiny_sample(text_dim: usize) -> Result<SampleInput, PipelineError> {
    fn graph(nodes: &[(&str, NodeType)], edges: &[(&str, &str, EdgeType, RuleId)]) -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        for (label, t) in nodes {
            b.add_node(label.replace(' ', "_"), label.to_string(), *t);
        }
        for (s, d, t, r) in edges {
            b.add_edge(s, d, *t, *r);
        }
        b.finish()
    }
    let evidence = graph(
        &[
            ("police", NodeType::Entity),
            ("arrest", NodeType::Event),
            ("protester", NodeType::Entity),
            ("paris", NodeType::Location),
            ("student", NodeType::Attribute),
        ],
        &[
            ("police", "arrest", EdgeType::Performs, RuleId::NsubjPerforms),
            ("arrest", "protester", EdgeType::Targets, RuleId::DobjTargets),
            ("arrest", "paris", EdgeType::LocatedIn, RuleId::VerbPrepLocatedIn),
            ("protester", "student", EdgeType::HasState, RuleId::CompoundHasState),
        ],
    );
    let claim = graph(
        &[
            ("police", NodeType::Entity),
            ("arrest", NodeType::Event),
            ("protester", NodeType::Entity),
            ("london", NodeType::Location),
        ],
        &[
            ("police", "arrest", EdgeType::Performs, RuleId::NsubjPerforms),
            ("arrest", "protester", EdgeType::Targets, RuleId::DobjTargets),
            ("arrest", "london", EdgeType::LocatedIn, RuleId::VerbPrepLocatedIn),
        ],
    );
    let mut s = pair_input(&claim, &evidence, &LabelEmbedder::Fallback { dim: text_dim })?;
    s.id = "tiny".into();
    s.label = 1;
    Ok(s)
}
