use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use treelink::data::{
    load_dataset, load_predictions, save_predictions, score_document, PredictionRecord,
    ScoredDocument,
};
use treelink::decode::{edmonds_max_arborescence, local_decode_options};
use treelink::error::{Error, Result};
use treelink::graph::{mask_to_gold, PrunedGoldPolicy, UncoverablePolicy};
use treelink::local::{local_nll, options_from_graph};
use treelink::metrics::{aggregate_macro, aggregate_micro, evaluate_document, EvalCounts};
use treelink::mtt::{enumerate_cluster_trees, global_nll, log_partition, log_sum_scores};
use treelink::scorer::ScorerParams;
use treelink::train::{train, Model, TrainConfig};

#[derive(Parser)]
#[command(
    name = "treelink",
    version,
    about = "Joint entity linking and coreference as tree-structured prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Local,
    Global,
}

impl From<ModelArg> for Model {
    fn from(arg: ModelArg) -> Model {
        match arg {
            ModelArg::Local => Model::Local,
            ModelArg::Global => Model::Global,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum UncoverableArg {
    /// Abort with the offending document id.
    Error,
    /// Demote uncoverable gold clusters to NIL.
    DemoteNil,
}

impl From<UncoverableArg> for UncoverablePolicy {
    fn from(arg: UncoverableArg) -> UncoverablePolicy {
        match arg {
            UncoverableArg::Error => UncoverablePolicy::Error,
            UncoverableArg::DemoteNil => UncoverablePolicy::DemoteToNil,
        }
    }
}

#[derive(Args)]
struct InferenceArgs {
    /// JSON Lines dataset.
    #[arg(long)]
    data: PathBuf,
    /// Scorer parameter file; required for feature documents.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "global")]
    model: ModelArg,
    /// Keep only the top-N spans by pruning score.
    #[arg(long)]
    top_n: Option<usize>,
    /// Drop span-span edges farther apart than this many positions.
    #[arg(long)]
    max_span_distance: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-document and mean negative log-likelihood against gold.
    Loss {
        #[command(flatten)]
        common: InferenceArgs,
        #[arg(long, value_enum, default_value = "error")]
        uncoverable: UncoverableArg,
    },
    /// Decode predictions for every document.
    Decode {
        #[command(flatten)]
        common: InferenceArgs,
        /// Predictions file (JSON Lines); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against a gold dataset.
    Eval {
        /// Gold JSON Lines dataset.
        #[arg(long)]
        gold: PathBuf,
        /// Predictions file produced by `decode`.
        #[arg(long)]
        pred: PathBuf,
        /// Emit one report per document before the corpus aggregate.
        #[arg(long)]
        per_doc: bool,
        /// Average per-document rates instead of pooling counts.
        #[arg(long)]
        macro_average: bool,
    },
    /// Gradient descent on the chosen likelihood; writes a parameter file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output parameter file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "global")]
        model: ModelArg,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        max_span_distance: Option<usize>,
        #[arg(long, value_enum, default_value = "error")]
        uncoverable: UncoverableArg,
        /// Hidden width for the scoring heads (linear when absent).
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Verify closed-form quantities against brute-force enumeration.
    OracleCheck {
        #[command(flatten)]
        common: InferenceArgs,
        /// Skip documents with more than this many non-root nodes.
        #[arg(long, default_value_t = 8)]
        oracle_cap: usize,
    },
}

fn load_params(path: &Option<PathBuf>) -> Result<Option<ScorerParams>> {
    path.as_ref().map(|p| ScorerParams::load(p)).transpose()
}

fn score_all(common: &InferenceArgs) -> Result<Vec<ScoredDocument>> {
    let dataset = load_dataset(&common.data)?;
    let params = load_params(&common.params)?;
    dataset
        .iter()
        .map(|record| {
            score_document(
                record,
                params.as_ref(),
                common.top_n,
                common.max_span_distance,
            )
        })
        .collect()
}

fn doc_nll(
    scored: &ScoredDocument,
    model: Model,
    uncoverable: UncoverablePolicy,
    pruned: PrunedGoldPolicy,
) -> Result<f64> {
    let gold = scored.gold.clone().ok_or_else(|| Error::Parse {
        path: format!("doc '{}'", scored.doc_id),
        msg: "gold annotation required".to_string(),
    })?;
    let gold = treelink::graph::apply_uncoverable_policy(
        &gold,
        &scored.spans,
        uncoverable,
        &scored.doc_id,
    )?;
    let aligned = treelink::graph::align_gold(&gold, &scored.spans, &scored.entities, pruned)?;
    match model {
        Model::Global => {
            let masked = mask_to_gold(&scored.graph, &aligned);
            global_nll(&scored.graph, &masked, &aligned)
        }
        Model::Local => {
            let options = options_from_graph(&scored.graph, &scored.spans, &scored.entities);
            local_nll(&options, &scored.spans, &aligned)
        }
    }
}

fn cmd_loss(common: &InferenceArgs, uncoverable: UncoverablePolicy) -> Result<()> {
    let docs = score_all(common)?;
    let pruned = if common.top_n.is_some() {
        PrunedGoldPolicy::Drop
    } else {
        PrunedGoldPolicy::Error
    };
    let mut total = 0.0;
    for scored in &docs {
        let nll = doc_nll(scored, common.model.into(), uncoverable, pruned)?;
        total += nll;
        println!("{}", json!({"doc_id": scored.doc_id, "nll": nll}));
    }
    let mean = total / docs.len().max(1) as f64;
    println!("{}", json!({"mean_nll": mean, "documents": docs.len()}));
    Ok(())
}

fn cmd_decode(common: &InferenceArgs, out: &Option<PathBuf>) -> Result<()> {
    let docs = score_all(common)?;
    let mut predictions = Vec::new();
    for scored in &docs {
        let clusters = match common.model.into() {
            Model::Global => {
                edmonds_max_arborescence(&scored.graph, &scored.spans, &scored.entities)?.clusters
            }
            Model::Local => {
                let options = options_from_graph(&scored.graph, &scored.spans, &scored.entities);
                local_decode_options(&options, &scored.spans, &scored.entities)?
            }
        };
        predictions.push(PredictionRecord::new(&scored.doc_id, &clusters));
    }
    match out {
        Some(path) => save_predictions(path, &predictions)?,
        None => {
            for record in &predictions {
                println!("{}", serde_json::to_string(record).expect("serializable"));
            }
        }
    }
    Ok(())
}

fn cmd_eval(gold: &PathBuf, pred: &PathBuf, per_doc: bool, macro_average: bool) -> Result<()> {
    let dataset = load_dataset(gold)?;
    let predictions = load_predictions(pred)?;
    let by_id: HashMap<&str, &PredictionRecord> = predictions
        .iter()
        .map(|p| (p.doc_id.as_str(), p))
        .collect();
    let mut counts: Vec<EvalCounts> = Vec::new();
    for record in &dataset {
        let gold_annotation = record
            .gold_annotation()
            .ok_or_else(|| Error::Parse {
                path: format!("doc '{}'", record.doc_id),
                msg: "gold annotation required for eval".to_string(),
            })?;
        let prediction = by_id.get(record.doc_id.as_str()).ok_or_else(|| Error::Parse {
            path: format!("doc '{}'", record.doc_id),
            msg: "no prediction for document".to_string(),
        })?;
        let spans = record.spans();
        let doc_counts =
            evaluate_document(&gold_annotation, &prediction.to_annotation(), &spans)?;
        if per_doc {
            let report = treelink::metrics::EvalReport::from_counts(doc_counts);
            println!(
                "{}",
                json!({"doc_id": record.doc_id, "report": report})
            );
        }
        counts.push(doc_counts);
    }
    let report = if macro_average {
        aggregate_macro(&counts).ok_or_else(|| Error::Parse {
            path: gold.display().to_string(),
            msg: "empty dataset".to_string(),
        })?
    } else {
        aggregate_micro(&counts)
    };
    println!("{}", serde_json::to_string(&report).expect("serializable"));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &PathBuf,
    out: &PathBuf,
    config: TrainConfig,
) -> Result<()> {
    let dataset = load_dataset(data)?;
    let (params, _) = train(&dataset, &config, |epoch, mean| {
        println!("{}", json!({"epoch": epoch, "mean_nll": mean}));
    })?;
    params.save(out)?;
    Ok(())
}

fn cmd_oracle_check(common: &InferenceArgs, cap: usize) -> Result<()> {
    let docs = score_all(common)?;
    // Test hook: pretend the closed-form value drifted, to exercise the
    // failure path end to end.
    let corruption: f64 = std::env::var("TREELINK_ORACLE_CORRUPT")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.0);
    let mut failures = Vec::new();
    for scored in &docs {
        let non_root = scored.graph.n_nodes() - 1;
        if non_root > cap {
            println!(
                "{}",
                json!({"doc_id": scored.doc_id, "status": "skipped", "non_root_nodes": non_root, "cap": cap})
            );
            continue;
        }
        let trees = treelink::mtt::enumerate_arborescences(&scored.graph, cap)?;
        let oracle = log_sum_scores(&trees);
        let closed = log_partition(&scored.graph)? + corruption;
        let partition_ok = (closed - oracle).abs() <= 1e-8 * oracle.abs().max(1.0);
        let mut cluster_reports = Vec::new();
        let mut clusters_ok = true;
        if scored.gold.is_some() {
            let aligned = aligned_gold_for_scored(scored)?;
            let masked = mask_to_gold(&scored.graph, &aligned);
            for (index, nodes) in aligned.clusters.iter().enumerate() {
                let closed_w =
                    treelink::mtt::cluster_log_weight(&masked, nodes, index)? + corruption;
                let oracle_w = log_sum_scores(&enumerate_cluster_trees(&masked, nodes));
                let ok = (closed_w - oracle_w).abs() <= 1e-8 * oracle_w.abs().max(1.0);
                clusters_ok &= ok;
                cluster_reports.push(json!({
                    "cluster": index,
                    "weight": closed_w.exp(),
                    "ok": ok,
                }));
            }
        }
        let status = if partition_ok && clusters_ok {
            "pass"
        } else {
            "fail"
        };
        println!(
            "{}",
            json!({
                "doc_id": scored.doc_id,
                "status": status,
                "partition": closed.exp(),
                "trees": trees.len(),
                "clusters": cluster_reports,
            })
        );
        if status == "fail" {
            failures.push(scored.doc_id.clone());
        }
    }
    if !failures.is_empty() {
        return Err(Error::OracleCheckFailed(format!(
            "documents failed: {}",
            failures.join(", ")
        )));
    }
    Ok(())
}

fn aligned_gold_for_scored(scored: &ScoredDocument) -> Result<treelink::graph::AlignedGold> {
    let gold = scored.gold.clone().expect("caller checked");
    treelink::graph::align_gold(
        &gold,
        &scored.spans,
        &scored.entities,
        PrunedGoldPolicy::Error,
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Loss { common, uncoverable } => cmd_loss(&common, uncoverable.into()),
        Command::Decode { common, out } => cmd_decode(&common, &out),
        Command::Eval {
            gold,
            pred,
            per_doc,
            macro_average,
        } => cmd_eval(&gold, &pred, per_doc, macro_average),
        Command::Train {
            data,
            out,
            model,
            epochs,
            lr,
            seed,
            top_n,
            max_span_distance,
            uncoverable,
            hidden,
        } => cmd_train(
            &data,
            &out,
            TrainConfig {
                model: model.into(),
                learning_rate: lr,
                epochs,
                seed,
                top_n,
                max_span_distance,
                uncoverable: uncoverable.into(),
                hidden,
            },
        ),
        Command::OracleCheck { common, oracle_cap } => cmd_oracle_check(&common, oracle_cap),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
