//! The local model: for each span, a softmax over its antecedent spans,
//! its candidate entities and an explicit dummy option with fixed score 0,
//! trained by marginalizing the probability of the correct options.
//!
//! Option scores reuse the document graph's edge scores: the option "span
//! j is the antecedent of span i" scores exactly like the edge
//! span_j -> span_i, and an entity option like the edge entity -> span_i,
//! so the local and tree-structured models agree on shared score entries.

use crate::error::{Error, Result};
use crate::graph::{
    build_graph, fill_scores, AlignedGold, CandidateEntity, DocumentGraph, Span,
};
use crate::scorer::ScorerParams;

/// One scoring option for a span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalOption {
    /// An earlier span, by span index.
    Antecedent(usize),
    /// A candidate entity of this span, by entity index.
    Entity(usize),
    /// Non-anaphoric, non-linkable; fixed score 0.
    Dummy,
}

/// Options and scores per span, in document order. Each span's list holds
/// its antecedent spans (ascending), then its candidate entities (input
/// order), then the dummy.
pub type OptionScores = Vec<Vec<(LocalOption, f64)>>;

/// Builds and scores the graph, then reads the per-span option lists off
/// the edge-score matrix.
pub fn local_scores(
    spans: &[Span],
    entities: &[CandidateEntity],
    params: &ScorerParams,
) -> Result<(DocumentGraph, OptionScores)> {
    let graph = build_graph(spans, entities, None)?;
    let graph = fill_scores(&graph, params, spans, entities)?;
    let options = options_from_graph(&graph, spans, entities);
    Ok((graph, options))
}

/// Reads option scores from an already scored graph.
pub fn options_from_graph(
    graph: &DocumentGraph,
    spans: &[Span],
    entities: &[CandidateEntity],
) -> OptionScores {
    let n_entities = entities.len();
    spans
        .iter()
        .enumerate()
        .map(|(i, span)| {
            let child = 1 + n_entities + i;
            let mut opts = Vec::new();
            for j in 0..i {
                let parent = 1 + n_entities + j;
                if graph.is_legal(parent, child) {
                    opts.push((LocalOption::Antecedent(j), graph.scores[parent][child]));
                }
            }
            for cand in &span.candidates {
                let e = entities
                    .iter()
                    .position(|ent| ent.id == *cand)
                    .expect("candidates resolve after build_graph");
                opts.push((LocalOption::Entity(e), graph.scores[1 + e][child]));
            }
            opts.push((LocalOption::Dummy, 0.0));
            opts
        })
        .collect()
}

/// Correct options per span under the gold clustering: gold-coreferent
/// earlier spans, the gold entity whenever it is in this span's candidate
/// list, and the dummy exactly when the span has no earlier gold
/// antecedent and no in-candidate gold entity.
fn gold_options(
    options: &OptionScores,
    spans: &[Span],
    aligned: &AlignedGold,
) -> Vec<Vec<bool>> {
    options
        .iter()
        .enumerate()
        .map(|(i, opts)| {
            let cluster = aligned.span_cluster[i];
            let link = aligned.links[cluster];
            let mut mask = vec![false; opts.len()];
            let mut has_antecedent = false;
            let mut has_entity = false;
            for (k, (opt, _)) in opts.iter().enumerate() {
                match *opt {
                    LocalOption::Antecedent(j) => {
                        if aligned.span_cluster[j] == cluster {
                            mask[k] = true;
                            has_antecedent = true;
                        }
                    }
                    LocalOption::Entity(e) => {
                        if link == Some(e) {
                            mask[k] = true;
                            has_entity = true;
                        }
                    }
                    LocalOption::Dummy => {}
                }
            }
            if !has_antecedent && !has_entity {
                let dummy = opts.len() - 1;
                debug_assert!(matches!(opts[dummy].0, LocalOption::Dummy));
                mask[dummy] = true;
            }
            let _ = spans;
            mask
        })
        .collect()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Negative log of the marginalized probability of the correct options,
/// summed over spans.
pub fn local_nll(
    options: &OptionScores,
    spans: &[Span],
    aligned: &AlignedGold,
) -> Result<f64> {
    let gold = gold_options(options, spans, aligned);
    let mut nll = 0.0;
    for (opts, mask) in options.iter().zip(&gold) {
        let scores: Vec<f64> = opts.iter().map(|(_, s)| *s).collect();
        let probs = softmax(&scores);
        let gold_mass: f64 = probs
            .iter()
            .zip(mask)
            .filter(|(_, &is_gold)| is_gold)
            .map(|(p, _)| p)
            .sum();
        if gold_mass <= 0.0 {
            return Err(Error::GradShape(
                "empty gold option set; the dummy rule guarantees at least one".to_string(),
            ));
        }
        nll -= gold_mass.ln();
    }
    Ok(nll)
}

/// Gradient of [`local_nll`] with respect to each option score:
/// `P(y) - P(y | gold)` (the gold-renormalized posterior), per span.
pub fn local_nll_option_grad(
    options: &OptionScores,
    spans: &[Span],
    aligned: &AlignedGold,
) -> Vec<Vec<f64>> {
    let gold = gold_options(options, spans, aligned);
    options
        .iter()
        .zip(&gold)
        .map(|(opts, mask)| {
            let scores: Vec<f64> = opts.iter().map(|(_, s)| *s).collect();
            let probs = softmax(&scores);
            let gold_mass: f64 = probs
                .iter()
                .zip(mask)
                .filter(|(_, &g)| g)
                .map(|(p, _)| p)
                .sum();
            probs
                .iter()
                .zip(mask)
                .map(|(&p, &g)| if g { p - p / gold_mass } else { p })
                .collect()
        })
        .collect()
}

/// Maps per-option gradients onto the graph's edge grid (the dummy option
/// has no parameters and is dropped).
pub fn option_grad_to_edge_grad(
    graph: &DocumentGraph,
    options: &OptionScores,
    option_grad: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = graph.n_nodes();
    let n_entities = graph.n_entities();
    let mut grad = vec![vec![0.0; n]; n];
    for (i, (opts, grads)) in options.iter().zip(option_grad).enumerate() {
        let child = 1 + n_entities + i;
        for ((opt, _), &g) in opts.iter().zip(grads) {
            match *opt {
                LocalOption::Antecedent(j) => grad[1 + n_entities + j][child] += g,
                LocalOption::Entity(e) => grad[1 + e][child] += g,
                LocalOption::Dummy => {}
            }
        }
    }
    grad
}
