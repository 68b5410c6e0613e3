//! Dataset interchange: JSON Lines documents, parameter files, prediction
//! files, and conversion into graphs ready for inference.
//!
//! A document supplies scoring inputs in exactly one of two ways: feature
//! vectors on every span and entity (scored through [`ScorerParams`]), or a
//! `raw_scores` table of log-domain edge scores keyed by node labels
//! (`root`, `e:<id>`, `s:<index>`).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_graph, fill_scores, CandidateEntity, Cluster, ClusterAnnotation, DocumentGraph, NodeRef,
    Span,
};
use crate::scorer::ScorerParams;

fn parse_err(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpanRecord {
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default)]
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ClusterRecord {
    pub mentions: Vec<(usize, usize)>,
    pub link: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct GoldRecord {
    pub clusters: Vec<ClusterRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub spans: Vec<SpanRecord>,
    pub entities: Vec<EntityRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_scores: Option<BTreeMap<String, f64>>,
}

impl From<&ClusterRecord> for Cluster {
    fn from(record: &ClusterRecord) -> Cluster {
        Cluster {
            mentions: record.mentions.clone(),
            link: record.link.clone(),
        }
    }
}

impl From<&Cluster> for ClusterRecord {
    fn from(cluster: &Cluster) -> ClusterRecord {
        ClusterRecord {
            mentions: cluster.mentions.clone(),
            link: cluster.link.clone(),
        }
    }
}

impl GoldRecord {
    pub fn to_annotation(&self) -> ClusterAnnotation {
        ClusterAnnotation {
            clusters: self.clusters.iter().map(Cluster::from).collect(),
        }
    }

    pub fn from_annotation(annotation: &ClusterAnnotation) -> GoldRecord {
        GoldRecord {
            clusters: annotation.clusters.iter().map(ClusterRecord::from).collect(),
        }
    }
}

/// Stable textual node labels used by `raw_scores` keys.
pub fn node_label(node: NodeRef, entities: &[CandidateEntity]) -> String {
    match node {
        NodeRef::Root => "root".to_string(),
        NodeRef::Entity(e) => format!("e:{}", entities[e].id),
        NodeRef::Span(s) => format!("s:{s}"),
    }
}

fn parse_label(label: &str, record: &DocumentRecord) -> Option<NodeRef> {
    if label == "root" {
        return Some(NodeRef::Root);
    }
    if let Some(id) = label.strip_prefix("e:") {
        return record
            .entities
            .iter()
            .position(|e| e.id == id)
            .map(NodeRef::Entity);
    }
    if let Some(idx) = label.strip_prefix("s:") {
        let s: usize = idx.parse().ok()?;
        if s < record.spans.len() {
            return Some(NodeRef::Span(s));
        }
    }
    None
}

impl DocumentRecord {
    /// Whether scoring inputs come from the raw edge-score table.
    pub fn uses_raw_scores(&self) -> bool {
        self.raw_scores.is_some()
    }

    pub fn spans(&self) -> Vec<Span> {
        self.spans
            .iter()
            .map(|s| Span {
                start: s.start,
                end: s.end,
                features: s.features.clone().unwrap_or_default(),
                candidates: s.candidates.clone(),
            })
            .collect()
    }

    pub fn entities(&self) -> Vec<CandidateEntity> {
        self.entities
            .iter()
            .map(|e| CandidateEntity {
                id: e.id.clone(),
                features: e.features.clone().unwrap_or_default(),
            })
            .collect()
    }

    pub fn gold_annotation(&self) -> Option<ClusterAnnotation> {
        self.gold.as_ref().map(GoldRecord::to_annotation)
    }
}

/// Parses and validates one document.
pub fn parse_document(bytes: &[u8]) -> Result<DocumentRecord> {
    let record: DocumentRecord = serde_json::from_slice(bytes)
        .map_err(|e| parse_err("$", format!("invalid document JSON: {e}")))?;
    validate_document(&record)?;
    Ok(record)
}

pub fn serialize_document(record: &DocumentRecord) -> String {
    serde_json::to_string(record).expect("document serialization cannot fail")
}

fn validate_document(record: &DocumentRecord) -> Result<()> {
    let mut prev: Option<(usize, usize)> = None;
    for (i, span) in record.spans.iter().enumerate() {
        let path = format!("$.spans[{i}]");
        if span.start >= span.end {
            return Err(parse_err(&path, "span start must precede end"));
        }
        if let Some(p) = prev {
            if p == (span.start, span.end) {
                return Err(Error::DuplicateSpan(span.start, span.end));
            }
            if p > (span.start, span.end) {
                return Err(parse_err(&path, "spans must be sorted by (start, end)"));
            }
        }
        prev = Some((span.start, span.end));
        for cand in &span.candidates {
            if !record.entities.iter().any(|e| &e.id == cand) {
                return Err(parse_err(
                    format!("{path}.candidates"),
                    format!("candidate '{cand}' is not a declared entity"),
                ));
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    for (i, entity) in record.entities.iter().enumerate() {
        if !seen.insert(&entity.id) {
            return Err(parse_err(
                format!("$.entities[{i}].id"),
                format!("duplicate entity id '{}'", entity.id),
            ));
        }
    }

    let span_features = record.spans.iter().filter(|s| s.features.is_some()).count();
    let entity_features = record
        .entities
        .iter()
        .filter(|e| e.features.is_some())
        .count();
    let all_features =
        span_features == record.spans.len() && entity_features == record.entities.len();
    let no_features = span_features == 0 && entity_features == 0;
    match (&record.raw_scores, all_features, no_features) {
        (Some(_), _, true) => validate_raw_scores(record),
        (Some(_), _, false) => Err(parse_err(
            "$",
            "raw_scores documents must not carry feature vectors",
        )),
        (None, true, _) => {
            if let Some(span) = record.spans.iter().find(|s| {
                s.features.as_ref().map(Vec::len) != record.spans[0].features.as_ref().map(Vec::len)
            }) {
                return Err(parse_err(
                    "$.spans",
                    format!(
                        "inconsistent span feature dimension at ({}, {})",
                        span.start, span.end
                    ),
                ));
            }
            Ok(())
        }
        // A document with no spans and no entities has nothing to score.
        (None, _, true) if record.spans.is_empty() && record.entities.is_empty() => Ok(()),
        (None, _, _) => Err(parse_err(
            "$",
            "scoring inputs must be either features on every span and entity, or raw_scores",
        )),
    }
}

/// Every legal edge must appear in the table (root->entity entries may be
/// omitted; when present they must be 0), and no key may name an illegal
/// or unknown edge.
fn validate_raw_scores(record: &DocumentRecord) -> Result<()> {
    let spans = record.spans();
    let entities = record.entities();
    let graph = build_graph(&spans, &entities, None)?;
    let table = record.raw_scores.as_ref().expect("checked by caller");
    let mut found = vec![vec![false; graph.n_nodes()]; graph.n_nodes()];
    for (key, &value) in table {
        let path = format!("$.raw_scores['{key}']");
        let (parent_label, child_label) = key
            .split_once('|')
            .ok_or_else(|| parse_err(&path, "key must be '<parent>|<child>'"))?;
        let parent = parse_label(parent_label, record)
            .ok_or_else(|| parse_err(&path, format!("unknown node label '{parent_label}'")))?;
        let child = parse_label(child_label, record)
            .ok_or_else(|| parse_err(&path, format!("unknown node label '{child_label}'")))?;
        let (p, c) = (graph.index(parent), graph.index(child));
        if !graph.is_legal(p, c) {
            return Err(parse_err(&path, "edge is not legal for this document"));
        }
        if matches!((parent, child), (NodeRef::Root, NodeRef::Entity(_))) && value != 0.0 {
            return Err(parse_err(&path, "root->entity scores are fixed at 0"));
        }
        found[p][c] = true;
    }
    for (p, c) in graph.legal_edges() {
        let root_entity = matches!(
            (graph.node(p), graph.node(c)),
            (NodeRef::Root, NodeRef::Entity(_))
        );
        if !found[p][c] && !root_entity {
            return Err(parse_err(
                "$.raw_scores",
                format!(
                    "missing score for legal edge {}|{}",
                    node_label(graph.node(p), &entities),
                    node_label(graph.node(c), &entities)
                ),
            ));
        }
    }
    Ok(())
}

/// A document converted to inference inputs: retained spans (after
/// pruning, for feature documents), entities, and the scored graph.
#[derive(Debug, Clone)]
pub struct ScoredDocument {
    pub doc_id: String,
    pub spans: Vec<Span>,
    pub entities: Vec<CandidateEntity>,
    pub graph: DocumentGraph,
    pub gold: Option<ClusterAnnotation>,
}

/// Builds the scored graph for a document. Feature documents are scored
/// through `params` (with optional top-N span pruning); raw-score
/// documents take edge scores verbatim from the table.
pub fn score_document(
    record: &DocumentRecord,
    params: Option<&ScorerParams>,
    top_n: Option<usize>,
    max_span_distance: Option<usize>,
) -> Result<ScoredDocument> {
    let entities = record.entities();
    if record.uses_raw_scores() {
        let spans = record.spans();
        let mut graph = build_graph(&spans, &entities, max_span_distance)?;
        let table = record.raw_scores.as_ref().expect("raw mode");
        for (key, &value) in table {
            let (pl, cl) = key.split_once('|').expect("validated");
            let p = graph.index(parse_label(pl, record).expect("validated"));
            let c = graph.index(parse_label(cl, record).expect("validated"));
            if graph.is_legal(p, c) {
                graph.scores[p][c] = value;
            }
        }
        return Ok(ScoredDocument {
            doc_id: record.doc_id.clone(),
            spans,
            entities,
            graph,
            gold: record.gold_annotation(),
        });
    }
    let params = params.ok_or_else(|| {
        parse_err("$", "feature documents require scorer parameters")
    })?;
    let mut spans = record.spans();
    if let Some(n) = top_n {
        let keep = params.prune_spans(&spans, n)?;
        spans = keep.into_iter().map(|i| spans[i].clone()).collect();
    }
    let graph = build_graph(&spans, &entities, max_span_distance)?;
    let graph = fill_scores(&graph, params, &spans, &entities)?;
    Ok(ScoredDocument {
        doc_id: record.doc_id.clone(),
        spans,
        entities,
        graph,
        gold: record.gold_annotation(),
    })
}

/// Loads a JSON Lines dataset; blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<DocumentRecord>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_document(line.as_bytes()).map_err(|e| match e {
            Error::Parse { path: p, msg } => Error::Parse {
                path: format!("{}:{} {}", path.display(), lineno + 1, p),
                msg,
            },
            other => other,
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_dataset(path: &Path, records: &[DocumentRecord]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for record in records {
        writeln!(out, "{}", serialize_document(record))?;
    }
    Ok(())
}

/// One line of a predictions file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub clusters: Vec<ClusterRecord>,
}

impl PredictionRecord {
    pub fn new(doc_id: &str, annotation: &ClusterAnnotation) -> PredictionRecord {
        PredictionRecord {
            doc_id: doc_id.to_string(),
            clusters: annotation.clusters.iter().map(ClusterRecord::from).collect(),
        }
    }

    pub fn to_annotation(&self) -> ClusterAnnotation {
        ClusterAnnotation {
            clusters: self.clusters.iter().map(Cluster::from).collect(),
        }
    }
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line).map_err(|e| {
            parse_err(
                format!("{}:{}", path.display(), lineno + 1),
                format!("invalid prediction JSON: {e}"),
            )
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for record in records {
        writeln!(
            out,
            "{}",
            serde_json::to_string(record).expect("prediction serialization cannot fail")
        )?;
    }
    Ok(())
}
