//! A small hand-checkable toy document shared by tests across modules:
//! two entities, three spans, known exponential edge weights, a known
//! all-trees weight sum of 3600 and gold cluster tree sums of 101 and 4.

use crate::graph::{build_graph, CandidateEntity, Cluster, ClusterAnnotation, DocumentGraph, Span};

/// Spans and entities of the toy document. Candidates: s1 -> {},
/// s2 -> {e1, e2}, s3 -> {e2}.
pub fn toy_inputs() -> (Vec<Span>, Vec<CandidateEntity>) {
    let spans = vec![
        Span {
            start: 0,
            end: 1,
            features: vec![],
            candidates: vec![],
        },
        Span {
            start: 1,
            end: 2,
            features: vec![],
            candidates: vec!["e1".to_string(), "e2".to_string()],
        },
        Span {
            start: 2,
            end: 3,
            features: vec![],
            candidates: vec!["e2".to_string()],
        },
    ];
    let entities = vec![
        CandidateEntity {
            id: "e1".to_string(),
            features: vec![],
        },
        CandidateEntity {
            id: "e2".to_string(),
            features: vec![],
        },
    ];
    (spans, entities)
}

/// The toy graph with log-domain scores set so that the exponential edge
/// weights are the small integers of the worked example.
pub fn toy_graph() -> DocumentGraph {
    let (spans, entities) = toy_inputs();
    let mut graph = build_graph(&spans, &entities, None).unwrap();
    // Node order: r=0, e1=1, e2=2, s1=3, s2=4, s3=5.
    let weights: &[(usize, usize, f64)] = &[
        (0, 1, 1.0),
        (0, 2, 1.0),
        (0, 3, 5.0),
        (0, 4, 3.0),
        (0, 5, 7.0),
        (1, 4, 1.0),
        (2, 4, 4.0),
        (2, 5, 2.0),
        (3, 4, 5.0),
        (3, 5, 9.0),
        (4, 3, 3.0),
        (4, 5, 2.0),
        (5, 3, 8.0),
        (5, 4, 4.0),
    ];
    for &(p, c, w) in weights {
        assert!(graph.is_legal(p, c));
        graph.scores[p][c] = w.ln();
    }
    graph
}

/// The toy document as an interchange record carrying the log-domain edge
/// scores in its `raw_scores` table.
pub fn toy_raw_scores_record() -> crate::data::DocumentRecord {
    use crate::data::{node_label, DocumentRecord, EntityRecord, GoldRecord, SpanRecord};
    let (spans, entities) = toy_inputs();
    let graph = toy_graph();
    let mut raw_scores = std::collections::BTreeMap::new();
    for (p, c) in graph.legal_edges() {
        let key = format!(
            "{}|{}",
            node_label(graph.node(p), &entities),
            node_label(graph.node(c), &entities)
        );
        raw_scores.insert(key, graph.scores[p][c]);
    }
    DocumentRecord {
        doc_id: "toy".to_string(),
        spans: spans
            .iter()
            .map(|s| SpanRecord {
                start: s.start,
                end: s.end,
                features: None,
                candidates: s.candidates.clone(),
            })
            .collect(),
        entities: entities
            .iter()
            .map(|e| EntityRecord {
                id: e.id.clone(),
                features: None,
            })
            .collect(),
        gold: Some(GoldRecord::from_annotation(&toy_gold())),
        raw_scores: Some(raw_scores),
    }
}

/// Gold clustering: NIL cluster {s1, s3} and linked cluster {s2 -> e2}.
pub fn toy_gold() -> ClusterAnnotation {
    ClusterAnnotation {
        clusters: vec![
            Cluster {
                mentions: vec![(0, 1), (2, 3)],
                link: None,
            },
            Cluster {
                mentions: vec![(1, 2)],
                link: Some("e2".to_string()),
            },
        ],
    }
}
