//! Rule-based graph construction over dependency parses.
//!
//! Entity spans become nodes typed by their NER label; every VERB token
//! becomes an EVENT node; edges come from a small set of dependency rules
//! (see [`RuleId`]). Mentions that differ only by case, spacing or a leading
//! "the" share one node.

use std::collections::{HashMap, HashSet};

use super::{Edge, EdgeType, GraphError, KnowledgeGraph, Node, NodeType, RuleId};
use crate::ingest::{ParsedDocument, Token};

const LOCATIVE_PREPS: [&str; 3] = ["in", "at", "on"];

/// Node id for a mention: lowercased, whitespace collapsed, leading "the "
/// removed.
pub fn canonical_id(label: &str) -> String {
    let collapsed = label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    match collapsed.strip_prefix("the ") {
        Some(rest) if !rest.is_empty() => rest.to_string(),
        _ => collapsed,
    }
}

pub fn node_type_for_ner(label: &str) -> NodeType {
    match label {
        "GPE" | "LOC" | "FAC" => NodeType::Location,
        "DATE" | "TIME" => NodeType::Time,
        "EVENT" => NodeType::Event,
        "PERCENT" | "MONEY" | "QUANTITY" | "ORDINAL" | "CARDINAL" => NodeType::Attribute,
        _ => NodeType::Entity,
    }
}

/// Incremental graph with id lookup and edge deduplication.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: KnowledgeGraph,
    index: HashMap<String, usize>,
    edges: HashSet<(String, String, EdgeType)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Adds a node unless its id is already present. Returns true if added.
    pub fn add_node(&mut self, id: String, label: String, node_type: NodeType) -> bool {
        if self.index.contains_key(&id) {
            return false;
        }
        self.index.insert(id.clone(), self.graph.nodes.len());
        self.graph.nodes.push(Node { id, label, node_type });
        true
    }

    /// Adds an edge between existing nodes. Self-loops and repeats of an
    /// existing (src, dst, type) triple are dropped. Returns true if added.
    pub fn add_edge(&mut self, src: &str, dst: &str, edge_type: EdgeType, rule: RuleId) -> bool {
        if src == dst || !self.contains(src) || !self.contains(dst) {
            return false;
        }
        let key = (src.to_string(), dst.to_string(), edge_type);
        if !self.edges.insert(key) {
            return false;
        }
        self.graph.edges.push(Edge {
            src: src.to_string(),
            dst: dst.to_string(),
            edge_type,
            rule,
        });
        true
    }

    /// Records two distinct nodes as co-referent.
    pub fn link_coreferent(&mut self, a: &str, b: &str) -> Result<bool, GraphError> {
        if a == b {
            return Err(GraphError::SameAsSelfLoop(a.to_string()));
        }
        for id in [a, b] {
            if !self.contains(id) {
                return Err(GraphError::DanglingEdge(id.to_string()));
            }
        }
        Ok(self.add_edge(a, b, EdgeType::SameAs, RuleId::Coreference))
    }

    pub fn finish(self) -> KnowledgeGraph {
        self.graph
    }
}

/// One node per deduplicated entity span, in order of first mention.
pub fn extract_nodes(doc: &ParsedDocument) -> Vec<Node> {
    let mut b = GraphBuilder::new();
    add_entity_nodes(&mut b, doc);
    b.finish().nodes
}

fn add_entity_nodes(b: &mut GraphBuilder, doc: &ParsedDocument) {
    for span in &doc.entity_spans {
        let text = doc.span_text(span);
        b.add_node(canonical_id(&text), text, node_type_for_ner(&span.label));
    }
}

/// Maps (sentence, 0-based token position) to the id of the entity node the
/// token belongs to.
fn token_nodes(doc: &ParsedDocument) -> HashMap<(usize, usize), String> {
    let mut map = HashMap::new();
    for span in &doc.entity_spans {
        let id = canonical_id(&doc.span_text(span));
        for pos in span.tokens.clone() {
            map.insert((span.sentence, pos), id.clone());
        }
    }
    map
}

fn is_verb(t: &Token) -> bool {
    t.upos == "VERB"
}

fn verb_lemma(t: &Token) -> String {
    let l = if t.lemma.is_empty() || t.lemma == "_" {
        &t.form
    } else {
        &t.lemma
    };
    l.to_lowercase()
}

/// Event ids per (sentence, position). A lemma that heads events in more than
/// one distinct sentence gets a `#sentence` suffix; identical repeated
/// sentences count as the sentence they repeat.
fn event_ids(doc: &ParsedDocument, entity_ids: &HashSet<String>) -> HashMap<(usize, usize), String> {
    let mut sentence_key = Vec::with_capacity(doc.sentences.len());
    for (si, s) in doc.sentences.iter().enumerate() {
        let first = doc.sentences[..si].iter().position(|prev| prev == s).unwrap_or(si);
        sentence_key.push(first);
    }

    let mut lemma_sentences: HashMap<String, HashSet<usize>> = HashMap::new();
    for (si, s) in doc.sentences.iter().enumerate() {
        for t in s.iter().filter(|t| is_verb(t)) {
            lemma_sentences
                .entry(verb_lemma(t))
                .or_default()
                .insert(sentence_key[si]);
        }
    }

    let mut ids = HashMap::new();
    for (si, s) in doc.sentences.iter().enumerate() {
        for (pos, t) in s.iter().enumerate().filter(|(_, t)| is_verb(t)) {
            let lemma = verb_lemma(t);
            let shared = lemma_sentences[&lemma].len() > 1 || entity_ids.contains(&lemma);
            let id = if shared {
                format!("{lemma}#{}", sentence_key[si])
            } else {
                lemma
            };
            ids.insert((si, pos), id);
        }
    }
    ids
}

/// Applies the dependency rules. EVENT nodes for verbs are appended to
/// `nodes` as they are met.
pub fn extract_edges(doc: &ParsedDocument, nodes: &mut Vec<Node>) -> Vec<Edge> {
    let mut b = GraphBuilder::new();
    for n in nodes.drain(..) {
        b.add_node(n.id, n.label, n.node_type);
    }
    apply_rules(&mut b, doc);
    let g = b.finish();
    *nodes = g.nodes;
    g.edges
}

fn apply_rules(b: &mut GraphBuilder, doc: &ParsedDocument) {
    let tok_node = token_nodes(doc);
    let entity_ids: HashSet<String> = tok_node.values().cloned().collect();
    let events = event_ids(doc, &entity_ids);

    for (si, sentence) in doc.sentences.iter().enumerate() {
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); sentence.len()];
        for (pos, t) in sentence.iter().enumerate() {
            if t.head > 0 {
                children[t.head - 1].push(pos);
            }
        }
        let node_of = |pos: usize| tok_node.get(&(si, pos)).map(String::as_str);
        let pobjs = |pos: usize| {
            children[pos]
                .iter()
                .copied()
                .filter(|&c| sentence[c].deprel == "pobj")
                .collect::<Vec<_>>()
        };

        for (pos, tok) in sentence.iter().enumerate() {
            if is_verb(tok) {
                let ev = events[&(si, pos)].clone();
                b.add_node(ev.clone(), verb_lemma(tok), NodeType::Event);
                for &c in &children[pos] {
                    let child = &sentence[c];
                    match child.deprel.as_str() {
                        "nsubj" => {
                            if let Some(n) = node_of(c) {
                                b.add_edge(n, &ev, EdgeType::Performs, RuleId::NsubjPerforms);
                            }
                        }
                        "nsubjpass" => {
                            if let Some(n) = node_of(c) {
                                b.add_edge(&ev, n, EdgeType::Experiences, RuleId::NsubjpassExperiences);
                            }
                        }
                        "dobj" => {
                            if let Some(n) = node_of(c) {
                                b.add_edge(&ev, n, EdgeType::Targets, RuleId::DobjTargets);
                            }
                        }
                        "pobj" => {
                            if let Some(n) = node_of(c) {
                                b.add_edge(&ev, n, EdgeType::Targets, RuleId::PobjTargets);
                            }
                        }
                        "prep" => {
                            let objects: Vec<&str> = pobjs(c).into_iter().filter_map(node_of).collect();
                            let locative = LOCATIVE_PREPS.contains(&child.form.to_lowercase().as_str());
                            if locative && !objects.is_empty() {
                                for n in objects {
                                    b.add_edge(&ev, n, EdgeType::LocatedIn, RuleId::VerbPrepLocatedIn);
                                }
                            } else {
                                for n in objects {
                                    b.add_edge(&ev, n, EdgeType::Targets, RuleId::PobjTargets);
                                }
                            }
                        }
                        _ => {}
                    }
                }
            }

            if tok.deprel == "prep" && tok.form.to_lowercase() == "in" && tok.head > 0 {
                let h = tok.head - 1;
                if !is_verb(&sentence[h]) {
                    if let Some(head_node) = node_of(h) {
                        for p in pobjs(pos) {
                            if let Some(n) = node_of(p) {
                                b.add_edge(head_node, n, EdgeType::LocatedIn, RuleId::HeadPrepInLocatedIn);
                            }
                        }
                    }
                }
            }

            if tok.deprel == "compound" && tok.head > 0 {
                if let (Some(c), Some(h)) = (node_of(pos), node_of(tok.head - 1)) {
                    b.add_edge(c, h, EdgeType::HasState, RuleId::CompoundHasState);
                }
            }
        }
    }
}

/// Entity nodes, then the rule pass over every sentence. Claim and evidence
/// graphs both go through here.
pub fn build_graph(doc: &ParsedDocument) -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    add_entity_nodes(&mut b, doc);
    apply_rules(&mut b, doc);
    b.finish()
}
