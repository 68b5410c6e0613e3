//! End-to-end acceptance gate. Each test prints one PASS/FAIL line
//! (visible with `cargo test --test acceptance -- --nocapture`).

mod common;

use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::{random_instance, synthetic_corpus};
use treelink::data::{score_document, DocumentRecord, EntityRecord, GoldRecord, SpanRecord};
use treelink::decode::{edmonds_max_arborescence, standalone_el_decode};
use treelink::fixtures::{toy_gold, toy_graph, toy_inputs};
use treelink::graph::{
    align_gold, build_graph, mask_to_gold, Cluster, ClusterAnnotation, PrunedGoldPolicy,
    Span, UncoverablePolicy,
};
use treelink::local::{local_nll, local_nll_option_grad, option_grad_to_edge_grad, options_from_graph};
use treelink::metrics::{b3, ceafe, el_hard_counts, muc};
use treelink::mtt::{
    cluster_log_weight, enumerate_arborescences, enumerate_cluster_trees, global_nll,
    global_nll_grad, log_partition, log_sum_scores,
};
use treelink::scorer::{default_distance_buckets, Head, ScorerParams};
use treelink::train::{doc_loss_and_grad, train, Model, TrainConfig};

fn criterion<F: FnOnce() + UnwindSafe>(n: usize, name: &str, f: F) {
    let result = catch_unwind(f);
    let verdict = if result.is_ok() { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE CRITERION {n} ({name}): {verdict}");
    if let Err(payload) = result {
        resume_unwind(payload);
    }
}

#[test]
fn criterion_1_worked_example_golden_values() {
    criterion(1, "worked-example golden values", || {
        let graph = toy_graph();
        let (spans, entities) = toy_inputs();
        let aligned =
            align_gold(&toy_gold(), &spans, &entities, PrunedGoldPolicy::Error).unwrap();
        let masked = mask_to_gold(&graph, &aligned);

        let partition = log_partition(&graph).unwrap().exp();
        assert!((partition - 3600.0).abs() < 1e-9 * 3600.0, "{partition}");

        let mut weights: Vec<f64> = aligned
            .clusters
            .iter()
            .enumerate()
            .map(|(i, nodes)| cluster_log_weight(&masked, nodes, i).unwrap().exp())
            .collect();
        weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((weights[0] - 4.0).abs() < 1e-9, "{weights:?}");
        assert!((weights[1] - 101.0).abs() < 1e-9, "{weights:?}");

        let nll = global_nll(&graph, &masked, &aligned).unwrap();
        let expect = -(404.0f64 / 3600.0).ln();
        assert!((nll - expect).abs() < 1e-9, "{nll} vs {expect}");
    });
}

#[test]
fn criterion_2_partition_and_numerators_match_enumeration() {
    criterion(2, "closed forms match brute-force enumeration", || {
        let start = Instant::now();
        let mut rng = ChaCha20Rng::seed_from_u64(20_000);
        for trial in 0..1000 {
            let inst = random_instance(&mut rng);
            let trees = enumerate_arborescences(&inst.graph, 6).unwrap();
            let oracle = log_sum_scores(&trees);
            let closed = log_partition(&inst.graph).unwrap();
            assert!(
                ((closed - oracle).exp() - 1.0).abs() <= 1e-9,
                "trial {trial}: partition {closed} vs {oracle}"
            );
            for (i, nodes) in inst.aligned.clusters.iter().enumerate() {
                let closed_w = cluster_log_weight(&inst.masked, nodes, i).unwrap();
                let oracle_w = log_sum_scores(&enumerate_cluster_trees(&inst.masked, nodes));
                assert!(
                    ((closed_w - oracle_w).exp() - 1.0).abs() <= 1e-8,
                    "trial {trial} cluster {i}: {closed_w} vs {oracle_w}"
                );
            }
        }
        assert!(start.elapsed().as_secs() < 10, "{:?}", start.elapsed());
    });
}

/// A random feature document whose gold clusters are always coverable.
fn random_feature_doc(rng: &mut ChaCha20Rng) -> DocumentRecord {
    let n_spans = rng.gen_range(2..=3usize);
    let n_entities = rng.gen_range(0..=2usize);
    let entities: Vec<EntityRecord> = (0..n_entities)
        .map(|e| EntityRecord {
            id: format!("e{e}"),
            features: Some((0..2).map(|_| rng.gen_range(-1.0..=1.0)).collect()),
        })
        .collect();
    let n_clusters = rng.gen_range(1..=n_spans);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for s in 0..n_spans {
        members[rng.gen_range(0..n_clusters)].push(s);
    }
    members.retain(|m| !m.is_empty());
    let mut available: Vec<usize> = (0..n_entities).collect();
    let links: Vec<Option<usize>> = members
        .iter()
        .map(|_| {
            if !available.is_empty() && rng.gen_bool(0.5) {
                Some(available.remove(rng.gen_range(0..available.len())))
            } else {
                None
            }
        })
        .collect();
    let mut candidates: Vec<Vec<String>> = vec![Vec::new(); n_spans];
    for (cluster, link) in members.iter().zip(&links) {
        if let Some(e) = link {
            for &s in cluster {
                candidates[s].push(entities[*e].id.clone());
            }
        }
    }
    let spans: Vec<SpanRecord> = (0..n_spans)
        .map(|s| SpanRecord {
            start: s,
            end: s + 1,
            features: Some((0..2).map(|_| rng.gen_range(-1.0..=1.0)).collect()),
            candidates: candidates[s].clone(),
        })
        .collect();
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
    DocumentRecord {
        doc_id: "fd".to_string(),
        spans,
        entities,
        gold: Some(GoldRecord::from_annotation(&gold)),
        raw_scores: None,
    }
}

fn assert_close(analytic: f64, numeric: f64, context: &str) {
    assert!(
        (analytic - numeric).abs() <= 1e-5 * numeric.abs() + 1e-7,
        "{context}: analytic {analytic} vs numeric {numeric}"
    );
}

#[test]
fn criterion_3_gradients_match_finite_differences() {
    criterion(3, "analytic gradients match finite differences", || {
        let start = Instant::now();
        let h = 1e-5;
        let mut rng = ChaCha20Rng::seed_from_u64(30_000);

        // Edge-level, both losses, on raw-score instances.
        for trial in 0..50 {
            let inst = random_instance(&mut rng);
            let g_grad = global_nll_grad(&inst.graph, &inst.masked, &inst.aligned).unwrap();
            let options = options_from_graph(&inst.graph, &inst.spans, &inst.entities);
            let o_grad = local_nll_option_grad(&options, &inst.spans, &inst.aligned);
            let l_grad = option_grad_to_edge_grad(&inst.graph, &options, &o_grad);
            let edges: Vec<(usize, usize)> = inst.graph.legal_edges().collect();
            for (p, c) in edges {
                if !inst.graph.scores[p][c].is_finite() {
                    continue;
                }
                let eval = |delta: f64| {
                    let mut g = inst.graph.clone();
                    g.scores[p][c] += delta;
                    let masked = mask_to_gold(&g, &inst.aligned);
                    let global = global_nll(&g, &masked, &inst.aligned).unwrap();
                    let opts = options_from_graph(&g, &inst.spans, &inst.entities);
                    let local = local_nll(&opts, &inst.spans, &inst.aligned).unwrap();
                    (global, local)
                };
                let (gp, lp) = eval(h);
                let (gm, lm) = eval(-h);
                assert_close(
                    g_grad[p][c],
                    (gp - gm) / (2.0 * h),
                    &format!("trial {trial} global edge {p}->{c}"),
                );
                assert_close(
                    l_grad[p][c],
                    (lp - lm) / (2.0 * h),
                    &format!("trial {trial} local edge {p}->{c}"),
                );
            }
        }

        // Parameter-level through the linear scorer, both losses.
        for trial in 0..50 {
            let record = random_feature_doc(&mut rng);
            for model in [Model::Global, Model::Local] {
                let config = TrainConfig {
                    model,
                    uncoverable: UncoverablePolicy::Error,
                    ..TrainConfig::default()
                };
                let mut params =
                    ScorerParams::init(2, 2, None, default_distance_buckets(), 30_000 + trial);
                let (_, grads) = doc_loss_and_grad(&record, &params, &config).unwrap();
                let analytic = grads.flat();
                let base = params.flat();
                for k in 0..base.len() {
                    let mut eval = |delta: f64| {
                        let mut x = base.clone();
                        x[k] += delta;
                        params.set_flat(&x).unwrap();
                        doc_loss_and_grad(&record, &params, &config).unwrap().0
                    };
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    params.set_flat(&base).unwrap();
                    assert_close(
                        analytic[k],
                        numeric,
                        &format!("trial {trial} {model:?} param {k}"),
                    );
                }
            }
        }
        assert!(start.elapsed().as_secs() < 30, "{:?}", start.elapsed());
    });
}

#[test]
fn criterion_4_edmonds_matches_brute_force() {
    criterion(4, "decoder matches brute-force maximum", || {
        let mut rng = ChaCha20Rng::seed_from_u64(40_000);
        for trial in 0..1000 {
            let inst = random_instance(&mut rng);
            let decoding =
                edmonds_max_arborescence(&inst.graph, &inst.spans, &inst.entities).unwrap();
            let best = enumerate_arborescences(&inst.graph, 6)
                .unwrap()
                .iter()
                .map(|(_, s)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(
                (decoding.tree_score - best).abs() <= 1e-9,
                "trial {trial}: {} vs {best}",
                decoding.tree_score
            );
        }

        // Gold-masked worked example reproduces the two gold clusters.
        let graph = toy_graph();
        let (spans, entities) = toy_inputs();
        let aligned =
            align_gold(&toy_gold(), &spans, &entities, PrunedGoldPolicy::Error).unwrap();
        let masked = mask_to_gold(&graph, &aligned);
        let decoding = edmonds_max_arborescence(&masked, &spans, &entities).unwrap();
        let mut clusters = decoding.clusters.clusters.clone();
        clusters.sort_by_key(|c| c.mentions.clone());
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].mentions, vec![(0, 1), (2, 3)]);
        assert_eq!(clusters[0].link, None);
        assert_eq!(clusters[1].mentions, vec![(1, 2)]);
        assert_eq!(clusters[1].link, Some("e2".to_string()));
    });
}

#[test]
fn criterion_5_corner_case_mentions() {
    criterion(5, "corner-case mention linking", || {
        // Two coreferent mentions of one entity; only the second mention's
        // candidate list contains it.
        let spans = vec![
            Span {
                start: 0,
                end: 1,
                features: vec![1.0],
                candidates: vec![],
            },
            Span {
                start: 1,
                end: 2,
                features: vec![1.0],
                candidates: vec!["x".to_string()],
            },
        ];
        let entities = vec![treelink::graph::CandidateEntity {
            id: "x".to_string(),
            features: vec![1.0],
        }];
        let gold = ClusterAnnotation {
            clusters: vec![Cluster {
                mentions: vec![(0, 1), (1, 2)],
                link: Some("x".to_string()),
            }],
        };

        // The standalone baseline can only link from each mention's own
        // candidate list, so the first mention stays NIL.
        let mut params = ScorerParams::zeros(1, 1, default_distance_buckets());
        params.link = Head::Linear {
            w: vec![0.0, 2.0],
            b: 0.0,
        };
        let standalone = standalone_el_decode(&spans, &entities, &params).unwrap();
        let counts =
            treelink::metrics::corner_case_counts(&gold, &standalone, &spans).unwrap();
        assert_eq!((counts.correct, counts.total), (0, 1));
        assert_eq!(counts.accuracy(), Some(0.0));

        // Global decoding under scores favoring the gold tree recovers the
        // link for both mentions through the shared cluster.
        let mut graph = build_graph(&spans, &entities, None).unwrap();
        let e = 1;
        let (s1, s2) = (2, 3);
        graph.scores[0][s1] = -2.0;
        graph.scores[0][s2] = -2.0;
        graph.scores[e][s2] = 3.0;
        graph.scores[s2][s1] = 3.0;
        graph.scores[s1][s2] = 0.0;
        let decoding = edmonds_max_arborescence(&graph, &spans, &entities).unwrap();
        let counts =
            treelink::metrics::corner_case_counts(&gold, &decoding.clusters, &spans).unwrap();
        assert_eq!((counts.correct, counts.total), (1, 1));
        assert_eq!(counts.accuracy(), Some(1.0));
    });
}

#[test]
fn criterion_6_metric_identities_and_fixtures() {
    criterion(6, "metric identities and hand-computed fixtures", || {
        let m = |ms: &[(usize, usize)], link: Option<&str>| Cluster {
            mentions: ms.to_vec(),
            link: link.map(str::to_string),
        };
        let gold = ClusterAnnotation {
            clusters: vec![
                m(&[(0, 1), (1, 2)], Some("x")),
                m(&[(2, 3)], None),
                m(&[(3, 4), (4, 5), (5, 6)], Some("y")),
            ],
        };
        // Perfection.
        for f in [muc, b3, ceafe] {
            let t = f(&gold, &gold).unwrap();
            assert_eq!((t.precision, t.recall, t.f1), (1.0, 1.0, 1.0));
        }

        // Role swap on random clusterings.
        let mut rng = ChaCha20Rng::seed_from_u64(60_000);
        for _ in 0..100 {
            let mut make = |n: usize| {
                let k = rng.gen_range(1..=n);
                let mut clusters = vec![Vec::new(); k];
                for s in 0..n {
                    clusters[rng.gen_range(0..k)].push((s, s + 1));
                }
                ClusterAnnotation {
                    clusters: clusters
                        .into_iter()
                        .filter(|c| !c.is_empty())
                        .map(|mentions| Cluster {
                            mentions,
                            link: None,
                        })
                        .collect(),
                }
            };
            let a = make(6);
            let b = make(6);
            for f in [muc, b3, ceafe] {
                let fwd = f(&a, &b).unwrap();
                let rev = f(&b, &a).unwrap();
                assert!((fwd.precision - rev.recall).abs() <= 1e-12);
                assert!((fwd.recall - rev.precision).abs() <= 1e-12);
            }
        }

        // Hand-computed fixtures.
        let g = ClusterAnnotation {
            clusters: vec![m(&[(0, 1), (1, 2), (2, 3)], None)],
        };
        let p = ClusterAnnotation {
            clusters: vec![m(&[(0, 1), (1, 2)], None), m(&[(2, 3)], None)],
        };
        let t = muc(&g, &p).unwrap();
        assert!((t.recall - 0.5).abs() <= 1e-12);
        assert!((t.precision - 1.0).abs() <= 1e-12);

        let g = ClusterAnnotation {
            clusters: vec![m(&[(0, 1), (1, 2)], None), m(&[(2, 3)], None)],
        };
        let p = ClusterAnnotation {
            clusters: vec![m(&[(0, 1), (1, 2), (2, 3)], None)],
        };
        let t = b3(&g, &p).unwrap();
        assert!((t.recall - 1.0).abs() <= 1e-12);
        assert!((t.precision - 5.0 / 9.0).abs() <= 1e-12);

        let g = ClusterAnnotation {
            clusters: vec![m(&[(0, 1), (1, 2)], None), m(&[(2, 3), (3, 4)], None)],
        };
        let p = ClusterAnnotation {
            clusters: vec![m(&[(0, 1), (2, 3)], None), m(&[(1, 2), (3, 4)], None)],
        };
        let t = ceafe(&g, &p).unwrap();
        assert!((t.precision - 0.5).abs() <= 1e-12);
        assert!((t.recall - 0.5).abs() <= 1e-12);
    });
}

#[test]
fn criterion_7_synthetic_training_recovers_gold() {
    criterion(7, "synthetic training reaches the regression bound", || {
        let start = Instant::now();
        let corpus = synthetic_corpus(50, 700);
        let held_out = synthetic_corpus(10, 701);
        let config = TrainConfig {
            model: Model::Global,
            learning_rate: 0.5,
            epochs: 200,
            seed: 7,
            uncoverable: UncoverablePolicy::Error,
            ..TrainConfig::default()
        };
        let (params, curve) = train(&corpus, &config, |_, _| {}).unwrap();
        let final_nll = *curve.last().unwrap();
        // Frozen regression bound: the first verified run reached 0.0066
        // after 200 epochs; 0.01 leaves headroom without hiding regressions.
        assert!(final_nll < 0.01, "final mean NLL {final_nll}");
        assert!(start.elapsed().as_secs() < 60, "{:?}", start.elapsed());

        let mut counts = treelink::metrics::MatchCounts::default();
        for record in &held_out {
            let scored = score_document(record, Some(&params), None, None).unwrap();
            let decoding =
                edmonds_max_arborescence(&scored.graph, &scored.spans, &scored.entities).unwrap();
            let gold = record.gold_annotation().unwrap();
            let doc = el_hard_counts(&gold, &decoding.clusters).unwrap();
            counts = treelink::metrics::MatchCounts {
                tp: counts.tp + doc.tp,
                pred_total: counts.pred_total + doc.pred_total,
                gold_total: counts.gold_total + doc.gold_total,
            };
        }
        let triple = counts.triple();
        assert_eq!(triple.f1, 1.0, "held-out EL_h {triple:?} ({counts:?})");
    });
}

#[test]
fn criterion_8_scaling_identity() {
    criterion(8, "partition scaling identity and shift-invariant decoding", || {
        let mut rng = ChaCha20Rng::seed_from_u64(80_000);
        for trial in 0..100 {
            let inst = random_instance(&mut rng);
            let c = rng.gen_range(-2.0..=2.0);
            let n = inst.graph.n_nodes() - 1;
            let mut shifted = inst.graph.clone();
            for (p, cc) in inst.graph.legal_edges().collect::<Vec<_>>() {
                if shifted.scores[p][cc].is_finite() {
                    shifted.scores[p][cc] += c;
                }
            }
            let base = log_partition(&inst.graph).unwrap();
            let moved = log_partition(&shifted).unwrap();
            assert!(
                (moved - (base + c * n as f64)).abs() <= 1e-8,
                "trial {trial}: {moved} vs {base} + {c}*{n}"
            );

            // Decoded edge set is shift-invariant when the maximum is strict.
            let trees = enumerate_arborescences(&inst.graph, 6).unwrap();
            let mut scores: Vec<f64> = trees.iter().map(|(_, s)| *s).collect();
            scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if scores.len() >= 2 && scores[0] - scores[1] <= 1e-6 {
                continue;
            }
            let a = edmonds_max_arborescence(&inst.graph, &inst.spans, &inst.entities).unwrap();
            let b = edmonds_max_arborescence(&shifted, &inst.spans, &inst.entities).unwrap();
            assert_eq!(a.parent, b.parent, "trial {trial}");
        }
    });
}
