//! Evaluation: MUC, B³ and CEAF_e with their average F1, mention-level and
//! cluster-level entity-linking F1 under strong (exact-boundary) matching,
//! and the analysis slices (corner-case mentions, cluster-size buckets).
//!
//! Conventions: 0/0 -> 0 for every precision, recall and F1; mentions that
//! appear on only one side contribute zero overlap to B³; corpus scores
//! aggregate document-level counts (micro) unless the macro variant is
//! requested explicitly.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{ClusterAnnotation, Span};

type Mention = (usize, usize);

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision, recall and F1 for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrfTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfTriple {
    fn new(p: f64, r: f64) -> Self {
        PrfTriple {
            precision: p,
            recall: r,
            f1: f1(p, r),
        }
    }
}

/// Numerator/denominator pairs for a precision-recall metric. Numerators
/// may be fractional (B³, CEAF_e).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PrCounts {
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl PrCounts {
    pub fn triple(&self) -> PrfTriple {
        PrfTriple::new(ratio(self.p_num, self.p_den), ratio(self.r_num, self.r_den))
    }

    fn add(&mut self, other: &PrCounts) {
        self.p_num += other.p_num;
        self.p_den += other.p_den;
        self.r_num += other.r_num;
        self.r_den += other.r_den;
    }
}

/// True-positive / predicted-total / gold-total counts for set matching.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub pred_total: usize,
    pub gold_total: usize,
}

impl MatchCounts {
    pub fn triple(&self) -> PrfTriple {
        PrfTriple::new(
            ratio(self.tp as f64, self.pred_total as f64),
            ratio(self.tp as f64, self.gold_total as f64),
        )
    }

    fn add(&mut self, other: &MatchCounts) {
        self.tp += other.tp;
        self.pred_total += other.pred_total;
        self.gold_total += other.gold_total;
    }
}

/// Correct/total for an accuracy slice; `total == 0` reports as N/A.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RatioCounts {
    pub correct: usize,
    pub total: usize,
}

impl RatioCounts {
    pub fn accuracy(&self) -> Option<f64> {
        if self.total == 0 {
            None
        } else {
            Some(self.correct as f64 / self.total as f64)
        }
    }

    fn add(&mut self, other: &RatioCounts) {
        self.correct += other.correct;
        self.total += other.total;
    }
}

/// All raw counts for one document (or a corpus, after summing).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct EvalCounts {
    pub muc: PrCounts,
    pub b3: PrCounts,
    pub ceafe: PrCounts,
    pub el_m: MatchCounts,
    pub el_h: MatchCounts,
    pub corner_case: RatioCounts,
    pub singleton: RatioCounts,
    pub multi: RatioCounts,
}

impl EvalCounts {
    pub fn add(&mut self, other: &EvalCounts) {
        self.muc.add(&other.muc);
        self.b3.add(&other.b3);
        self.ceafe.add(&other.ceafe);
        self.el_m.add(&other.el_m);
        self.el_h.add(&other.el_h);
        self.corner_case.add(&other.corner_case);
        self.singleton.add(&other.singleton);
        self.multi.add(&other.multi);
    }
}

/// Rates computed from [`EvalCounts`], plus the counts themselves.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub muc: PrfTriple,
    pub b3: PrfTriple,
    pub ceafe: PrfTriple,
    pub coref_avg_f1: f64,
    pub el_m: PrfTriple,
    pub el_h: PrfTriple,
    pub corner_case_acc: Option<f64>,
    pub singleton_acc: Option<f64>,
    pub multi_acc: Option<f64>,
    pub counts: EvalCounts,
}

impl EvalReport {
    pub fn from_counts(counts: EvalCounts) -> Self {
        let muc = counts.muc.triple();
        let b3 = counts.b3.triple();
        let ceafe = counts.ceafe.triple();
        EvalReport {
            muc,
            b3,
            ceafe,
            coref_avg_f1: (muc.f1 + b3.f1 + ceafe.f1) / 3.0,
            el_m: counts.el_m.triple(),
            el_h: counts.el_h.triple(),
            corner_case_acc: counts.corner_case.accuracy(),
            singleton_acc: counts.singleton.accuracy(),
            multi_acc: counts.multi.accuracy(),
            counts,
        }
    }
}

/// Rejects annotations whose clusters overlap or contain an empty cluster.
fn validate(annotation: &ClusterAnnotation, side: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for cluster in &annotation.clusters {
        if cluster.mentions.is_empty() {
            return Err(Error::InvalidClustering(format!("empty {side} cluster")));
        }
        for &m in &cluster.mentions {
            if !seen.insert(m) {
                return Err(Error::InvalidClustering(format!(
                    "{side} mention ({}, {}) appears in two clusters",
                    m.0, m.1
                )));
            }
        }
    }
    Ok(())
}

fn mention_cluster_map(annotation: &ClusterAnnotation) -> HashMap<Mention, usize> {
    let mut map = HashMap::new();
    for (c, cluster) in annotation.clusters.iter().enumerate() {
        for &m in &cluster.mentions {
            map.insert(m, c);
        }
    }
    map
}

/// Link-based MUC counts. Each gold cluster contributes |c| minus the
/// number of pieces the prediction cuts it into (unmatched mentions count
/// as their own piece); precision is the same with the roles swapped.
pub fn muc_counts(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<PrCounts> {
    validate(gold, "gold")?;
    validate(pred, "predicted")?;
    fn side(key: &ClusterAnnotation, other: &ClusterAnnotation) -> (f64, f64) {
        let other_map = mention_cluster_map(other);
        let mut num = 0.0;
        let mut den = 0.0;
        for cluster in &key.clusters {
            let mut pieces: HashSet<Option<usize>> = HashSet::new();
            let mut unmatched = 0usize;
            for m in &cluster.mentions {
                match other_map.get(m) {
                    Some(&c) => {
                        pieces.insert(Some(c));
                    }
                    None => unmatched += 1,
                }
            }
            num += (cluster.mentions.len() - pieces.len() - unmatched) as f64;
            den += (cluster.mentions.len() - 1) as f64;
        }
        (num, den)
    }
    let (r_num, r_den) = side(gold, pred);
    let (p_num, p_den) = side(pred, gold);
    Ok(PrCounts {
        p_num,
        p_den,
        r_num,
        r_den,
    })
}

pub fn muc(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<PrfTriple> {
    Ok(muc_counts(gold, pred)?.triple())
}

/// B³ counts. A mention present on only one side contributes zero overlap
/// (and a full unit to that side's denominator).
pub fn b3_counts(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<PrCounts> {
    validate(gold, "gold")?;
    validate(pred, "predicted")?;
    fn side(key: &ClusterAnnotation, other: &ClusterAnnotation) -> (f64, f64) {
        let other_map = mention_cluster_map(other);
        let mut num = 0.0;
        let mut den = 0.0;
        for cluster in &key.clusters {
            for m in &cluster.mentions {
                den += 1.0;
                if let Some(&oc) = other_map.get(m) {
                    let overlap = cluster
                        .mentions
                        .iter()
                        .filter(|m2| other_map.get(m2) == Some(&oc))
                        .count();
                    num += overlap as f64 / cluster.mentions.len() as f64;
                }
            }
        }
        (num, den)
    }
    let (r_num, r_den) = side(gold, pred);
    let (p_num, p_den) = side(pred, gold);
    Ok(PrCounts {
        p_num,
        p_den,
        r_num,
        r_den,
    })
}

pub fn b3(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<PrfTriple> {
    Ok(b3_counts(gold, pred)?.triple())
}

/// CEAF_e counts: optimal one-to-one cluster alignment maximizing the
/// total φ4 similarity 2|c∩c'|/(|c|+|c'|).
pub fn ceafe_counts(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<PrCounts> {
    validate(gold, "gold")?;
    validate(pred, "predicted")?;
    let ng = gold.clusters.len();
    let np = pred.clusters.len();
    let mut sim = vec![vec![0.0f64; np]; ng];
    for (g, gc) in gold.clusters.iter().enumerate() {
        let gset: HashSet<&Mention> = gc.mentions.iter().collect();
        for (p, pc) in pred.clusters.iter().enumerate() {
            let inter = pc.mentions.iter().filter(|m| gset.contains(m)).count();
            sim[g][p] = 2.0 * inter as f64 / (gc.mentions.len() + pc.mentions.len()) as f64;
        }
    }
    let total = max_assignment(&sim);
    Ok(PrCounts {
        p_num: total,
        p_den: np as f64,
        r_num: total,
        r_den: ng as f64,
    })
}

pub fn ceafe(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<PrfTriple> {
    Ok(ceafe_counts(gold, pred)?.triple())
}

/// Maximum-weight bipartite assignment on a (possibly rectangular)
/// non-negative similarity matrix. Hungarian algorithm with potentials,
/// O(n³) on the zero-padded square matrix.
pub fn max_assignment(sim: &[Vec<f64>]) -> f64 {
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let n = rows.max(cols);
    // Minimize cost = -similarity on the padded square matrix.
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -sim[i][j]
        } else {
            0.0
        }
    };
    // 1-indexed potentials over rows (u) and columns (v); way[j] is the
    // predecessor column on the current augmenting path.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = 0.0;
    for j in 1..=n {
        let i = matched_row[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            total += sim[i - 1][j - 1];
        }
    }
    total
}

pub fn coref_avg_f1(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<f64> {
    Ok((muc(gold, pred)?.f1 + b3(gold, pred)?.f1 + ceafe(gold, pred)?.f1) / 3.0)
}

/// (mention, entity) pairs from linked clusters only.
fn linked_mention_pairs(annotation: &ClusterAnnotation) -> HashSet<(Mention, &str)> {
    let mut pairs = HashSet::new();
    for cluster in &annotation.clusters {
        if let Some(link) = &cluster.link {
            for &m in &cluster.mentions {
                pairs.insert((m, link.as_str()));
            }
        }
    }
    pairs
}

/// Mention-level entity-linking counts under strong matching, over
/// non-NIL mentions on both sides.
pub fn el_mention_counts(
    gold: &ClusterAnnotation,
    pred: &ClusterAnnotation,
) -> Result<MatchCounts> {
    validate(gold, "gold")?;
    validate(pred, "predicted")?;
    let gold_pairs = linked_mention_pairs(gold);
    let pred_pairs = linked_mention_pairs(pred);
    Ok(MatchCounts {
        tp: gold_pairs.intersection(&pred_pairs).count(),
        pred_total: pred_pairs.len(),
        gold_total: gold_pairs.len(),
    })
}

pub fn el_mention_f1(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<PrfTriple> {
    Ok(el_mention_counts(gold, pred)?.triple())
}

/// Cluster-level hard entity-linking counts: a true positive requires the
/// exact gold mention set and the gold entity. NIL clusters are excluded
/// on both sides.
pub fn el_hard_counts(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<MatchCounts> {
    validate(gold, "gold")?;
    validate(pred, "predicted")?;
    fn keyed(annotation: &ClusterAnnotation) -> HashSet<(Vec<Mention>, &str)> {
        annotation
            .clusters
            .iter()
            .filter_map(|c| {
                c.link.as_deref().map(|link| {
                    let mut mentions = c.mentions.clone();
                    mentions.sort_unstable();
                    (mentions, link)
                })
            })
            .collect()
    }
    let gold_set = keyed(gold);
    let pred_set = keyed(pred);
    Ok(MatchCounts {
        tp: gold_set.intersection(&pred_set).count(),
        pred_total: pred_set.len(),
        gold_total: gold_set.len(),
    })
}

pub fn el_hard_f1(gold: &ClusterAnnotation, pred: &ClusterAnnotation) -> Result<PrfTriple> {
    Ok(el_hard_counts(gold, pred)?.triple())
}

/// Corner-case slice: gold non-NIL mentions whose own candidate list
/// lacks the gold entity while some other mention of the same cluster has
/// it. Counts how many such mentions end up linked to the gold entity.
pub fn corner_case_counts(
    gold: &ClusterAnnotation,
    pred: &ClusterAnnotation,
    spans: &[Span],
) -> Result<RatioCounts> {
    validate(gold, "gold")?;
    validate(pred, "predicted")?;
    let candidates: HashMap<Mention, &[String]> = spans
        .iter()
        .map(|s| ((s.start, s.end), s.candidates.as_slice()))
        .collect();
    let has_entity = |m: &Mention, e: &str| {
        candidates
            .get(m)
            .is_some_and(|c| c.iter().any(|id| id == e))
    };
    let pred_map = mention_cluster_map(pred);
    let mut counts = RatioCounts::default();
    for cluster in &gold.clusters {
        let Some(entity) = &cluster.link else {
            continue;
        };
        let coverable = cluster.mentions.iter().any(|m| has_entity(m, entity));
        if !coverable {
            continue;
        }
        for m in &cluster.mentions {
            if has_entity(m, entity) {
                continue;
            }
            counts.total += 1;
            let predicted = pred_map
                .get(m)
                .and_then(|&c| pred.clusters[c].link.as_deref());
            if predicted == Some(entity.as_str()) {
                counts.correct += 1;
            }
        }
    }
    Ok(counts)
}

/// Per-cluster link accuracy over gold linked clusters, bucketed by gold
/// cluster size (singletons vs. multi-mention). A cluster is correct when
/// every one of its mentions is predicted to link to the gold entity.
pub fn cluster_size_counts(
    gold: &ClusterAnnotation,
    pred: &ClusterAnnotation,
) -> Result<(RatioCounts, RatioCounts)> {
    validate(gold, "gold")?;
    validate(pred, "predicted")?;
    let pred_map = mention_cluster_map(pred);
    let mut singleton = RatioCounts::default();
    let mut multi = RatioCounts::default();
    for cluster in &gold.clusters {
        let Some(entity) = &cluster.link else {
            continue;
        };
        let all_correct = cluster.mentions.iter().all(|m| {
            pred_map
                .get(m)
                .and_then(|&c| pred.clusters[c].link.as_deref())
                == Some(entity.as_str())
        });
        let bucket = if cluster.mentions.len() == 1 {
            &mut singleton
        } else {
            &mut multi
        };
        bucket.total += 1;
        if all_correct {
            bucket.correct += 1;
        }
    }
    Ok((singleton, multi))
}

pub fn cluster_size_accuracy(
    gold: &ClusterAnnotation,
    pred: &ClusterAnnotation,
) -> Result<(Option<f64>, Option<f64>)> {
    let (s, m) = cluster_size_counts(gold, pred)?;
    Ok((s.accuracy(), m.accuracy()))
}

/// All counts for one document.
pub fn evaluate_document(
    gold: &ClusterAnnotation,
    pred: &ClusterAnnotation,
    spans: &[Span],
) -> Result<EvalCounts> {
    let (singleton, multi) = cluster_size_counts(gold, pred)?;
    Ok(EvalCounts {
        muc: muc_counts(gold, pred)?,
        b3: b3_counts(gold, pred)?,
        ceafe: ceafe_counts(gold, pred)?,
        el_m: el_mention_counts(gold, pred)?,
        el_h: el_hard_counts(gold, pred)?,
        corner_case: corner_case_counts(gold, pred, spans)?,
        singleton,
        multi,
    })
}

/// Micro aggregation: sums document counts, then computes rates once.
pub fn aggregate_micro(docs: &[EvalCounts]) -> EvalReport {
    let mut total = EvalCounts::default();
    for doc in docs {
        total.add(doc);
    }
    EvalReport::from_counts(total)
}

/// Macro aggregation: averages per-document rates, skipping documents
/// where a slice is undefined.
pub fn aggregate_macro(docs: &[EvalCounts]) -> Option<EvalReport> {
    if docs.is_empty() {
        return None;
    }
    let reports: Vec<EvalReport> = docs.iter().map(|d| EvalReport::from_counts(*d)).collect();
    let n = reports.len() as f64;
    let mean_triple = |get: &dyn Fn(&EvalReport) -> PrfTriple| {
        let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
        for rep in &reports {
            let t = get(rep);
            p += t.precision;
            r += t.recall;
            f += t.f1;
        }
        PrfTriple {
            precision: p / n,
            recall: r / n,
            f1: f / n,
        }
    };
    let mean_opt = |get: &dyn Fn(&EvalReport) -> Option<f64>| {
        let values: Vec<f64> = reports.iter().filter_map(get).collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    let muc = mean_triple(&|r| r.muc);
    let b3 = mean_triple(&|r| r.b3);
    let ceafe = mean_triple(&|r| r.ceafe);
    let mut counts = EvalCounts::default();
    for doc in docs {
        counts.add(doc);
    }
    Some(EvalReport {
        muc,
        b3,
        ceafe,
        coref_avg_f1: reports.iter().map(|r| r.coref_avg_f1).sum::<f64>() / n,
        el_m: mean_triple(&|r| r.el_m),
        el_h: mean_triple(&|r| r.el_h),
        corner_case_acc: mean_opt(&|r| r.corner_case_acc),
        singleton_acc: mean_opt(&|r| r.singleton_acc),
        multi_acc: mean_opt(&|r| r.multi_acc),
        counts,
    })
}
