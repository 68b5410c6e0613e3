//! Shared generators for the integration suites: small random documents
//! with hand-enumerable graphs, and a linearly separable synthetic corpus.

// Each integration test binary compiles its own copy; not all of them use
// every generator.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use treelink::data::{DocumentRecord, EntityRecord, GoldRecord, SpanRecord};
use treelink::graph::{
    align_gold, build_graph, mask_to_gold, AlignedGold, CandidateEntity, Cluster,
    ClusterAnnotation, DocumentGraph, PrunedGoldPolicy, Span,
};
use treelink::local::{local_nll, options_from_graph};
use treelink::mtt::{cluster_log_weight, log_partition};

pub struct RandomInstance {
    pub spans: Vec<Span>,
    pub entities: Vec<CandidateEntity>,
    pub graph: DocumentGraph,
    pub gold: ClusterAnnotation,
    pub aligned: AlignedGold,
    pub masked: DocumentGraph,
}

/// A random document with 2-6 non-root nodes, scores U[-3,3] on a random
/// legal-edge subset, and a random gold clustering. Resamples until the
/// full partition and every gold-cluster weight are well defined.
pub fn random_instance(rng: &mut ChaCha20Rng) -> RandomInstance {
    loop {
        let n_spans = rng.gen_range(1..=4usize);
        let n_entities = rng.gen_range(
            (2usize.saturating_sub(n_spans))..=(2usize.min(6 - n_spans)),
        );

        // Random partition of spans into gold clusters.
        let n_clusters = rng.gen_range(1..=n_spans);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
        for s in 0..n_spans {
            members[rng.gen_range(0..n_clusters)].push(s);
        }
        members.retain(|m| !m.is_empty());

        // Link some clusters to distinct entities.
        let mut available: Vec<usize> = (0..n_entities).collect();
        let links: Vec<Option<usize>> = members
            .iter()
            .map(|_| {
                if !available.is_empty() && rng.gen_bool(0.5) {
                    let pick = rng.gen_range(0..available.len());
                    Some(available.remove(pick))
                } else {
                    None
                }
            })
            .collect();

        let entities: Vec<CandidateEntity> = (0..n_entities)
            .map(|e| CandidateEntity {
                id: format!("e{e}"),
                features: vec![],
            })
            .collect();

        // Candidate lists: linked spans always carry their gold entity;
        // everything else picks up random distractors.
        let mut candidates: Vec<Vec<String>> = vec![Vec::new(); n_spans];
        for (cluster, link) in members.iter().zip(&links) {
            for &s in cluster {
                if let Some(e) = link {
                    candidates[s].push(entities[*e].id.clone());
                }
            }
        }
        for cand in candidates.iter_mut() {
            for entity in &entities {
                if !cand.contains(&entity.id) && rng.gen_bool(0.3) {
                    cand.push(entity.id.clone());
                }
            }
        }

        let spans: Vec<Span> = (0..n_spans)
            .map(|s| Span {
                start: s,
                end: s + 1,
                features: vec![],
                candidates: candidates[s].clone(),
            })
            .collect();

        let mut graph = build_graph(&spans, &entities, None).unwrap();
        let edges: Vec<(usize, usize)> = graph.legal_edges().collect();
        for (p, c) in edges {
            if p == 0 && c <= n_entities {
                continue; // root->entity stays fixed at 0
            }
            if rng.gen_bool(0.25) {
                graph.scores[p][c] = f64::NEG_INFINITY;
            } else {
                graph.scores[p][c] = rng.gen_range(-3.0..=3.0);
            }
        }

        let gold = ClusterAnnotation {
            clusters: members
                .iter()
                .zip(&links)
                .map(|(cluster, link)| Cluster {
                    mentions: cluster.iter().map(|&s| (s, s + 1)).collect(),
                    link: link.map(|e| entities[e].id.clone()),
                })
                .collect(),
        };
        let aligned = align_gold(&gold, &spans, &entities, PrunedGoldPolicy::Error).unwrap();
        let masked = mask_to_gold(&graph, &aligned);

        if log_partition(&graph).is_err() {
            continue;
        }
        if aligned
            .clusters
            .iter()
            .enumerate()
            .any(|(i, nodes)| cluster_log_weight(&masked, nodes, i).is_err())
        {
            continue;
        }
        // Dropped edges may also leave a span with no gold option under
        // the local loss; those instances are unusable too.
        let options = options_from_graph(&graph, &spans, &entities);
        if local_nll(&options, &spans, &aligned).is_err() {
            continue;
        }
        return RandomInstance {
            spans,
            entities,
            graph,
            gold,
            aligned,
            masked,
        };
    }
}

/// A linearly separable corpus: every document has two 2-mention clusters
/// linked to per-document gold entities plus one NIL singleton. Span
/// features are a cluster one-hot plus a NIL flag with tiny seeded noise;
/// gold entities carry feature +1, the shared distractor -1.
pub fn synthetic_corpus(n_docs: usize, seed: u64) -> Vec<DocumentRecord> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|d| {
            let mut noise = |base: [f64; 3]| -> Vec<f64> {
                base.iter()
                    .map(|v| v + rng.gen_range(-0.01..=0.01))
                    .collect()
            };
            let gold0 = format!("d{d}_g0");
            let gold1 = format!("d{d}_g1");
            let distractor = format!("d{d}_x");
            // Interleaved mention order: c0, c1, c0, c1, nil.
            let layout = [
                ([1.0, 0.0, 0.0], vec![gold0.clone(), distractor.clone()]),
                ([0.0, 1.0, 0.0], vec![gold1.clone(), distractor.clone()]),
                ([1.0, 0.0, 0.0], vec![gold0.clone(), distractor.clone()]),
                ([0.0, 1.0, 0.0], vec![gold1.clone(), distractor.clone()]),
                ([0.0, 0.0, 1.0], vec![]),
            ];
            let spans: Vec<SpanRecord> = layout
                .iter()
                .enumerate()
                .map(|(i, (base, candidates))| SpanRecord {
                    start: i,
                    end: i + 1,
                    features: Some(noise(*base)),
                    candidates: candidates.clone(),
                })
                .collect();
            let entities = vec![
                EntityRecord {
                    id: gold0.clone(),
                    features: Some(vec![1.0]),
                },
                EntityRecord {
                    id: gold1.clone(),
                    features: Some(vec![1.0]),
                },
                EntityRecord {
                    id: distractor,
                    features: Some(vec![-1.0]),
                },
            ];
            let gold = ClusterAnnotation {
                clusters: vec![
                    Cluster {
                        mentions: vec![(0, 1), (2, 3)],
                        link: Some(gold0),
                    },
                    Cluster {
                        mentions: vec![(1, 2), (3, 4)],
                        link: Some(gold1),
                    },
                    Cluster {
                        mentions: vec![(4, 5)],
                        link: None,
                    },
                ],
            };
            DocumentRecord {
                doc_id: format!("doc{d}"),
                spans,
                entities,
                gold: Some(GoldRecord::from_annotation(&gold)),
                raw_scores: None,
            }
        })
        .collect()
}
