//! Document graph: root, candidate entities and retained spans, with the
//! legal directed edge set and the dense edge-score matrix used by both
//! losses and by decoding.
//!
//! Node ordering is fixed as `[root, entities in input order, spans in
//! input order]`; illegal or masked edges carry a `-inf` sentinel
//! (exponential weight exactly 0).

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::scorer::ScorerParams;

/// A candidate mention span with token offsets `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub features: Vec<f64>,
    /// Candidate entity ids from the alias table; may be empty.
    pub candidates: Vec<String>,
}

/// A knowledge-base entity that appears in at least one candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEntity {
    pub id: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRef {
    Root,
    Entity(usize),
    Span(usize),
}

/// One coreference cluster: mention boundaries plus an optional entity link
/// (`None` means NIL).
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub mentions: Vec<(usize, usize)>,
    pub link: Option<String>,
}

/// A gold or predicted partition of mentions into clusters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterAnnotation {
    pub clusters: Vec<Cluster>,
}

impl ClusterAnnotation {
    /// Errors if any mention appears in more than one cluster.
    pub fn validate_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for cluster in &self.clusters {
            for &m in &cluster.mentions {
                if !seen.insert(m) {
                    return Err(Error::InvalidClustering(format!(
                        "mention ({}, {}) appears in more than one cluster",
                        m.0, m.1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What to do when a gold mention is not among the retained spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrunedGoldPolicy {
    Error,
    Drop,
}

/// What to do when a linked gold cluster's entity is in no member's
/// candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UncoverablePolicy {
    #[default]
    Error,
    DemoteToNil,
}

#[derive(Debug, Clone)]
pub struct DocumentGraph {
    n_entities: usize,
    n_spans: usize,
    /// Raw log-domain edge scores; `-inf` for illegal or masked edges.
    pub scores: Vec<Vec<f64>>,
    legal: Vec<Vec<bool>>,
}

impl DocumentGraph {
    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_spans(&self) -> usize {
        self.n_spans
    }

    /// Number of nodes including the root.
    pub fn n_nodes(&self) -> usize {
        1 + self.n_entities + self.n_spans
    }

    pub fn node(&self, index: usize) -> NodeRef {
        if index == 0 {
            NodeRef::Root
        } else if index <= self.n_entities {
            NodeRef::Entity(index - 1)
        } else {
            NodeRef::Span(index - 1 - self.n_entities)
        }
    }

    pub fn index(&self, node: NodeRef) -> usize {
        match node {
            NodeRef::Root => 0,
            NodeRef::Entity(e) => 1 + e,
            NodeRef::Span(s) => 1 + self.n_entities + s,
        }
    }

    pub fn is_legal(&self, parent: usize, child: usize) -> bool {
        self.legal[parent][child]
    }

    pub fn legal_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n_nodes();
        (0..n).flat_map(move |p| (0..n).filter(move |&c| self.legal[p][c]).map(move |c| (p, c)))
    }

    /// Maximum finite edge score; 0.0 when only the fixed root->entity
    /// edges carry a finite score.
    pub fn max_finite_score(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (p, c) in self.legal_edges() {
            let s = self.scores[p][c];
            if s.is_finite() && s > best {
                best = s;
            }
        }
        if best.is_finite() {
            best
        } else {
            0.0
        }
    }
}

/// Builds the legal edge set over `[root, entities, spans]`.
///
/// Legal edges: root->entity (every entity, score fixed at 0), root->span
/// (every span), entity->span when the entity is in the span's candidate
/// list, and span->span for every ordered pair of distinct spans within
/// `max_span_distance` (unlimited when `None`). All other scores start at
/// the `-inf` sentinel.
pub fn build_graph(
    spans: &[Span],
    entities: &[CandidateEntity],
    max_span_distance: Option<usize>,
) -> Result<DocumentGraph> {
    let mut entity_index = HashMap::new();
    for (e, entity) in entities.iter().enumerate() {
        if entity_index.insert(entity.id.as_str(), e).is_some() {
            return Err(Error::DuplicateEntity(entity.id.clone()));
        }
    }
    let n_entities = entities.len();
    let n_spans = spans.len();
    let n = 1 + n_entities + n_spans;
    let mut legal = vec![vec![false; n]; n];
    let mut scores = vec![vec![f64::NEG_INFINITY; n]; n];

    for e in 0..n_entities {
        legal[0][1 + e] = true;
        scores[0][1 + e] = 0.0; // root->entity convention: exp weight 1
    }
    for (s, span) in spans.iter().enumerate() {
        let child = 1 + n_entities + s;
        legal[0][child] = true;
        for cand in &span.candidates {
            match entity_index.get(cand.as_str()) {
                Some(&e) => legal[1 + e][child] = true,
                None => return Err(Error::InvalidCandidate(cand.clone())),
            }
        }
    }
    for i in 0..n_spans {
        for j in 0..n_spans {
            if i == j {
                continue;
            }
            let distance = i.abs_diff(j);
            if max_span_distance.map_or(true, |cap| distance <= cap) {
                legal[1 + n_entities + i][1 + n_entities + j] = true;
            }
        }
    }
    Ok(DocumentGraph {
        n_entities,
        n_spans,
        scores,
        legal,
    })
}

/// Fills the score matrix from the parametric scorer.
///
/// Span->span edges use the parent-first pair score, entity->span edges
/// the link score plus the child's pruning score, and root->span edges the
/// pair score against the learned root feature vector with distance
/// bucket 0.
pub fn fill_scores(
    graph: &DocumentGraph,
    params: &ScorerParams,
    spans: &[Span],
    entities: &[CandidateEntity],
) -> Result<DocumentGraph> {
    let mut out = graph.clone();
    let prune: Vec<f64> = spans
        .iter()
        .map(|s| params.pruning_score(&s.features))
        .collect::<Result<_>>()?;
    for (p, c) in graph.legal_edges() {
        let score = match (graph.node(p), graph.node(c)) {
            (NodeRef::Root, NodeRef::Entity(_)) => continue, // fixed at 0
            (NodeRef::Root, NodeRef::Span(j)) => {
                // pruning score of the root is 0 by convention
                prune[j] + params.pair_score(&params.root_features.clone(), &spans[j].features, 0)?
            }
            (NodeRef::Entity(e), NodeRef::Span(j)) => {
                prune[j] + params.link_score(&spans[j].features, &entities[e].features)?
            }
            (NodeRef::Span(i), NodeRef::Span(j)) => {
                prune[i]
                    + prune[j]
                    + params.pair_score(&spans[i].features, &spans[j].features, i.abs_diff(j))?
            }
            _ => unreachable!("illegal edge in legal set"),
        };
        out.scores[p][c] = score;
    }
    Ok(out)
}

/// A gold clustering aligned to the retained spans: clusters as graph node
/// index lists (linked entity first), covering every span exactly once.
#[derive(Debug, Clone)]
pub struct AlignedGold {
    /// Per cluster: node indices into the graph, entity node first for
    /// linked clusters. Spans absent from the annotation appear as
    /// implicit NIL singletons.
    pub clusters: Vec<Vec<usize>>,
    /// Per cluster: linked entity index, if any.
    pub links: Vec<Option<usize>>,
    /// Gold cluster index per span index.
    pub span_cluster: Vec<usize>,
}

/// Resolves gold mentions to span indices and entity ids to entity
/// indices, adding implicit NIL singletons for uncovered spans.
pub fn align_gold(
    gold: &ClusterAnnotation,
    spans: &[Span],
    entities: &[CandidateEntity],
    policy: PrunedGoldPolicy,
) -> Result<AlignedGold> {
    gold.validate_disjoint()?;
    let span_by_bounds: HashMap<(usize, usize), usize> = spans
        .iter()
        .enumerate()
        .map(|(i, s)| ((s.start, s.end), i))
        .collect();
    let entity_by_id: HashMap<&str, usize> = entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let n_entities = entities.len();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut links: Vec<Option<usize>> = Vec::new();
    let mut span_cluster = vec![usize::MAX; spans.len()];

    for cluster in &gold.clusters {
        let mut member_spans = Vec::new();
        for &(start, end) in &cluster.mentions {
            match span_by_bounds.get(&(start, end)) {
                Some(&s) => member_spans.push(s),
                None => match policy {
                    PrunedGoldPolicy::Error => return Err(Error::GoldSpanPruned(start, end)),
                    PrunedGoldPolicy::Drop => {}
                },
            }
        }
        if member_spans.is_empty() {
            continue;
        }
        member_spans.sort_unstable();
        let link = match &cluster.link {
            Some(id) => Some(
                *entity_by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::InvalidCandidate(id.clone()))?,
            ),
            None => None,
        };
        let mut nodes = Vec::new();
        if let Some(e) = link {
            nodes.push(1 + e);
        }
        for &s in &member_spans {
            span_cluster[s] = clusters.len();
            nodes.push(1 + n_entities + s);
        }
        clusters.push(nodes);
        links.push(link);
    }
    // Spans never mentioned in the annotation become NIL singletons.
    for s in 0..spans.len() {
        if span_cluster[s] == usize::MAX {
            span_cluster[s] = clusters.len();
            clusters.push(vec![1 + n_entities + s]);
            links.push(None);
        }
    }
    Ok(AlignedGold {
        clusters,
        links,
        span_cluster,
    })
}

/// Applies the uncoverable-cluster policy: a linked cluster whose entity is
/// in no member's candidate list either errors or is demoted to NIL.
pub fn apply_uncoverable_policy(
    gold: &ClusterAnnotation,
    spans: &[Span],
    policy: UncoverablePolicy,
    doc_id: &str,
) -> Result<ClusterAnnotation> {
    let candidates_by_bounds: HashMap<(usize, usize), &[String]> = spans
        .iter()
        .map(|s| ((s.start, s.end), s.candidates.as_slice()))
        .collect();
    let mut out = gold.clone();
    for cluster in &mut out.clusters {
        let Some(link) = cluster.link.clone() else {
            continue;
        };
        let coverable = cluster.mentions.iter().any(|m| {
            candidates_by_bounds
                .get(m)
                .map_or(false, |cands| cands.iter().any(|c| *c == link))
        });
        if !coverable {
            match policy {
                UncoverablePolicy::Error => {
                    return Err(Error::UncoverableCluster {
                        doc: doc_id.to_string(),
                        entity: link,
                    })
                }
                UncoverablePolicy::DemoteToNil => cluster.link = None,
            }
        }
    }
    Ok(out)
}

/// Copy of the graph with every edge inconsistent with the gold clustering
/// removed (set to the `-inf` sentinel).
///
/// Kept edges: root->entity always; root->span only for spans in NIL
/// clusters; entity->span only when the span's cluster links to that
/// entity; span->span only within one gold cluster.
pub fn mask_to_gold(graph: &DocumentGraph, aligned: &AlignedGold) -> DocumentGraph {
    let mut out = graph.clone();
    let n_entities = graph.n_entities();
    for (p, c) in graph.legal_edges() {
        let keep = match (graph.node(p), graph.node(c)) {
            (NodeRef::Root, NodeRef::Entity(_)) => true,
            (NodeRef::Root, NodeRef::Span(j)) => {
                aligned.links[aligned.span_cluster[j]].is_none()
            }
            (NodeRef::Entity(e), NodeRef::Span(j)) => {
                aligned.links[aligned.span_cluster[j]] == Some(e)
            }
            (NodeRef::Span(i), NodeRef::Span(j)) => {
                aligned.span_cluster[i] == aligned.span_cluster[j]
            }
            _ => unreachable!("illegal edge in legal set"),
        };
        if !keep {
            out.scores[p][c] = f64::NEG_INFINITY;
            out.legal[p][c] = false;
        }
        let _ = n_entities;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{toy_gold, toy_graph, toy_inputs};

    fn span(start: usize, end: usize, candidates: &[&str]) -> Span {
        Span {
            start,
            end,
            features: vec![],
            candidates: candidates.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn entity(id: &str) -> CandidateEntity {
        CandidateEntity {
            id: id.to_string(),
            features: vec![],
        }
    }

    #[test]
    fn toy_graph_has_14_legal_edges() {
        let (spans, entities) = toy_inputs();
        let graph = build_graph(&spans, &entities, None).unwrap();
        let edges: Vec<_> = graph.legal_edges().collect();
        // 5 root edges + 3 entity->span edges + 6 span->span edges.
        assert_eq!(edges.len(), 14);
        // r -> {e1, e2, s1, s2, s3}
        for child in 1..=5 {
            assert!(graph.is_legal(0, child));
        }
        // e1 -> s2, e2 -> s2, e2 -> s3 (node order: r, e1, e2, s1, s2, s3)
        assert!(graph.is_legal(1, 4));
        assert!(graph.is_legal(2, 4));
        assert!(graph.is_legal(2, 5));
        assert!(!graph.is_legal(1, 3));
        // all 6 ordered span pairs
        for i in 3..=5 {
            for j in 3..=5 {
                assert_eq!(graph.is_legal(i, j), i != j);
            }
        }
    }

    #[test]
    fn minimal_graph_single_span() {
        let graph = build_graph(&[span(0, 1, &[])], &[], None).unwrap();
        let edges: Vec<_> = graph.legal_edges().collect();
        assert_eq!(edges, vec![(0, 1)]);
    }

    #[test]
    fn four_spans_one_shared_entity_is_21_edges() {
        let spans: Vec<Span> = (0..4).map(|i| span(i, i + 1, &["e"])).collect();
        let graph = build_graph(&spans, &[entity("e")], None).unwrap();
        assert_eq!(graph.legal_edges().count(), 21);
    }

    #[test]
    fn dangling_candidate_is_invalid() {
        let err = build_graph(&[span(0, 1, &["missing"])], &[], None).unwrap_err();
        assert!(matches!(err, Error::InvalidCandidate(_)));
    }

    #[test]
    fn duplicate_entity_id_rejected() {
        let err = build_graph(&[], &[entity("e"), entity("e")], None).unwrap_err();
        assert!(matches!(err, Error::DuplicateEntity(_)));
    }

    #[test]
    fn distance_cap_limits_span_pairs() {
        let spans: Vec<Span> = (0..4).map(|i| span(i, i + 1, &[])).collect();
        let graph = build_graph(&spans, &[], Some(1)).unwrap();
        // 4 root edges + adjacent pairs in both directions (3 * 2).
        assert_eq!(graph.legal_edges().count(), 10);
    }

    #[test]
    fn root_entity_scores_are_zero() {
        let (spans, entities) = toy_inputs();
        let graph = build_graph(&spans, &entities, None).unwrap();
        assert_eq!(graph.scores[0][1], 0.0);
        assert_eq!(graph.scores[0][2], 0.0);
    }

    #[test]
    fn node_index_roundtrip() {
        let (spans, entities) = toy_inputs();
        let graph = build_graph(&spans, &entities, None).unwrap();
        for i in 0..graph.n_nodes() {
            assert_eq!(graph.index(graph.node(i)), i);
        }
    }

    #[test]
    fn mask_keeps_exactly_the_green_edges() {
        let graph = toy_graph();
        let (spans, entities) = toy_inputs();
        let aligned =
            align_gold(&toy_gold(), &spans, &entities, PrunedGoldPolicy::Error).unwrap();
        let masked = mask_to_gold(&graph, &aligned);
        let kept: Vec<_> = masked.legal_edges().collect();
        // {r->e1, r->e2, r->s1, r->s3, e2->s2, s1->s3, s3->s1}
        assert_eq!(kept, vec![(0, 1), (0, 2), (0, 3), (0, 5), (2, 4), (3, 5), (5, 3)]);
        assert!((masked.scores[0][3].exp() - 5.0).abs() < 1e-12);
        assert!((masked.scores[0][5].exp() - 7.0).abs() < 1e-12);
        assert!((masked.scores[3][5].exp() - 9.0).abs() < 1e-12);
        assert!((masked.scores[5][3].exp() - 8.0).abs() < 1e-12);
        assert!((masked.scores[2][4].exp() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mask_is_idempotent_and_subset() {
        let graph = toy_graph();
        let (spans, entities) = toy_inputs();
        let aligned =
            align_gold(&toy_gold(), &spans, &entities, PrunedGoldPolicy::Error).unwrap();
        let masked = mask_to_gold(&graph, &aligned);
        let twice = mask_to_gold(&masked, &aligned);
        assert_eq!(masked.scores, twice.scores);
        for (p, c) in masked.legal_edges() {
            assert!(graph.is_legal(p, c));
        }
    }

    #[test]
    fn single_nil_cluster_keeps_root_and_within_edges() {
        let spans: Vec<Span> = (0..3).map(|i| span(i, i + 1, &[])).collect();
        let entities = vec![entity("e")];
        let graph = build_graph(&spans, &entities, None).unwrap();
        let gold = ClusterAnnotation {
            clusters: vec![Cluster {
                mentions: vec![(0, 1), (1, 2), (2, 3)],
                link: None,
            }],
        };
        let aligned = align_gold(&gold, &spans, &entities, PrunedGoldPolicy::Error).unwrap();
        let masked = mask_to_gold(&graph, &aligned);
        // r->e plus r->span and span->span edges all survive.
        assert_eq!(masked.legal_edges().count(), 1 + 3 + 6);
    }

    #[test]
    fn gold_span_pruned_policies() {
        let spans = vec![span(0, 1, &[])];
        let gold = ClusterAnnotation {
            clusters: vec![Cluster {
                mentions: vec![(0, 1), (5, 6)],
                link: None,
            }],
        };
        let err = align_gold(&gold, &spans, &[], PrunedGoldPolicy::Error).unwrap_err();
        assert!(matches!(err, Error::GoldSpanPruned(5, 6)));
        let aligned = align_gold(&gold, &spans, &[], PrunedGoldPolicy::Drop).unwrap();
        assert_eq!(aligned.clusters.len(), 1);
    }

    #[test]
    fn uncoverable_policy_demotes_or_errors() {
        let spans = vec![span(0, 1, &["other"])];
        let gold = ClusterAnnotation {
            clusters: vec![Cluster {
                mentions: vec![(0, 1)],
                link: Some("e".to_string()),
            }],
        };
        let err = apply_uncoverable_policy(&gold, &spans, UncoverablePolicy::Error, "d").unwrap_err();
        assert!(matches!(err, Error::UncoverableCluster { .. }));
        let demoted =
            apply_uncoverable_policy(&gold, &spans, UncoverablePolicy::DemoteToNil, "d").unwrap();
        assert_eq!(demoted.clusters[0].link, None);
    }
}
