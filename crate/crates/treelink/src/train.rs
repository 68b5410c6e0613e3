//! Plain gradient descent over the global (tree-partition) or local
//! (antecedent-ranking) negative log-likelihood of a feature dataset.

use crate::data::{score_document, DocumentRecord};
use crate::error::{Error, Result};
use crate::graph::{
    align_gold, apply_uncoverable_policy, mask_to_gold, AlignedGold, PrunedGoldPolicy,
    UncoverablePolicy,
};
use crate::local::{local_nll, local_nll_option_grad, option_grad_to_edge_grad, options_from_graph};
use crate::mtt::{global_nll, global_nll_grad};
use crate::scorer::{default_distance_buckets, ScorerGrads, ScorerParams};

/// Which likelihood to optimize (and which decoder to use downstream).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Local,
    Global,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: Model,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Keep only the top-N spans by pruning score before inference.
    pub top_n: Option<usize>,
    pub max_span_distance: Option<usize>,
    pub uncoverable: UncoverablePolicy,
    /// Hidden width of the scoring heads; linear heads when absent.
    pub hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: Model::Global,
            learning_rate: 0.5,
            epochs: 100,
            seed: 0,
            top_n: None,
            max_span_distance: None,
            uncoverable: UncoverablePolicy::Error,
            hidden: None,
        }
    }
}

/// Seeded parameter initialization with dimensions read off the dataset.
pub fn init_params(dataset: &[DocumentRecord], config: &TrainConfig) -> Result<ScorerParams> {
    let mut d_span = None;
    let mut d_entity = 0;
    for record in dataset {
        if record.uses_raw_scores() {
            return Err(Error::Parse {
                path: format!("doc '{}'", record.doc_id),
                msg: "raw_scores documents cannot be trained on".to_string(),
            });
        }
        for span in &record.spans {
            let d = span.features.as_ref().map_or(0, Vec::len);
            match d_span {
                None => d_span = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::FeatureDim {
                        expected: prev,
                        got: d,
                    })
                }
                _ => {}
            }
        }
        for entity in &record.entities {
            d_entity = d_entity.max(entity.features.as_ref().map_or(0, Vec::len));
        }
    }
    let d_span = d_span.ok_or_else(|| Error::Parse {
        path: "dataset".to_string(),
        msg: "no spans to infer feature dimensions from".to_string(),
    })?;
    Ok(ScorerParams::init(
        d_span,
        d_entity,
        config.hidden,
        default_distance_buckets(),
        config.seed,
    ))
}

/// Gold clustering for one document under the configured policies, aligned
/// to the retained spans. Spans the pruner dropped fall out of their gold
/// clusters (a cluster left empty disappears).
pub fn aligned_gold_for(
    record: &DocumentRecord,
    spans: &[crate::graph::Span],
    entities: &[crate::graph::CandidateEntity],
    uncoverable: UncoverablePolicy,
    pruned: PrunedGoldPolicy,
) -> Result<AlignedGold> {
    let gold = record.gold_annotation().ok_or_else(|| Error::Parse {
        path: format!("doc '{}'", record.doc_id),
        msg: "gold annotation required".to_string(),
    })?;
    let gold = apply_uncoverable_policy(&gold, spans, uncoverable, &record.doc_id)?;
    align_gold(&gold, spans, entities, pruned)
}

/// NLL and parameter gradient of one document under the chosen model.
pub fn doc_loss_and_grad(
    record: &DocumentRecord,
    params: &ScorerParams,
    config: &TrainConfig,
) -> Result<(f64, ScorerGrads)> {
    let scored = score_document(record, Some(params), config.top_n, config.max_span_distance)?;
    let pruned_policy = if config.top_n.is_some() {
        PrunedGoldPolicy::Drop
    } else {
        PrunedGoldPolicy::Error
    };
    let aligned = aligned_gold_for(
        record,
        &scored.spans,
        &scored.entities,
        config.uncoverable,
        pruned_policy,
    )?;
    let (loss, edge_grad) = match config.model {
        Model::Global => {
            let masked = mask_to_gold(&scored.graph, &aligned);
            let loss = global_nll(&scored.graph, &masked, &aligned)?;
            (loss, global_nll_grad(&scored.graph, &masked, &aligned)?)
        }
        Model::Local => {
            let options = options_from_graph(&scored.graph, &scored.spans, &scored.entities);
            let loss = local_nll(&options, &scored.spans, &aligned)?;
            let option_grad = local_nll_option_grad(&options, &scored.spans, &aligned);
            (
                loss,
                option_grad_to_edge_grad(&scored.graph, &options, &option_grad),
            )
        }
    };
    let grads =
        params.accumulate_param_grads(&scored.graph, &edge_grad, &scored.spans, &scored.entities)?;
    Ok((loss, grads))
}

/// Mean NLL over a dataset without touching the parameters.
pub fn mean_loss(
    dataset: &[DocumentRecord],
    params: &ScorerParams,
    config: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for record in dataset {
        total += doc_loss_and_grad(record, params, config)?.0;
    }
    Ok(total / dataset.len().max(1) as f64)
}

/// Full-batch gradient descent. Returns the trained parameters and the
/// per-epoch mean NLL (measured before each update); `on_epoch` fires once
/// per epoch with the same values. Zero epochs returns the seeded
/// initialization untouched.
pub fn train(
    dataset: &[DocumentRecord],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ScorerParams, Vec<f64>)> {
    let mut params = init_params(dataset, config)?;
    let mut curve = Vec::with_capacity(config.epochs);
    let n = dataset.len().max(1) as f64;
    for epoch in 0..config.epochs {
        let mut total_loss = 0.0;
        let mut total_grads = ScorerGrads::zeros(&params);
        for record in dataset {
            let (loss, grads) = doc_loss_and_grad(record, &params, config)?;
            total_loss += loss;
            total_grads.add(&grads);
        }
        total_grads.scale(1.0 / n);
        params.apply_gradient(&total_grads, config.learning_rate);
        let mean = total_loss / n;
        curve.push(mean);
        on_epoch(epoch, mean);
    }
    Ok((params, curve))
}
