//! Prediction: maximum spanning arborescence via Chu-Liu/Edmonds with
//! cycle contraction, extraction of clusters and entity links from the
//! decoded tree, greedy argmax decoding for the local model, and a
//! per-mention standalone linking baseline.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{CandidateEntity, Cluster, ClusterAnnotation, DocumentGraph, NodeRef, Span};
use crate::local::{local_scores, LocalOption, OptionScores};
use crate::scorer::ScorerParams;

/// A decoded arborescence together with its cluster reading.
#[derive(Debug, Clone)]
pub struct TreeDecoding {
    /// Parent node index per node; `parent[0]` is unused (the root).
    pub parent: Vec<usize>,
    pub clusters: ClusterAnnotation,
    pub tree_score: f64,
}

/// Maximum-score spanning arborescence rooted at node 0.
///
/// Ties are broken toward the lower (parent, child) pair, so decoding is
/// reproducible. Dense O(V^2) contraction per round.
pub fn edmonds_max_arborescence(
    graph: &DocumentGraph,
    spans: &[Span],
    entities: &[CandidateEntity],
) -> Result<TreeDecoding> {
    let n = graph.n_nodes();
    let mut scores = vec![vec![f64::NEG_INFINITY; n]; n];
    for (p, c) in graph.legal_edges() {
        scores[p][c] = graph.scores[p][c];
    }
    let parent = solve(&scores)?;
    let tree_score = (1..n).map(|c| scores[parent[c]][c]).sum();
    let clusters = extract_clusters(&parent, graph, spans, entities)?;
    Ok(TreeDecoding {
        parent,
        clusters,
        tree_score,
    })
}

/// One level of Chu-Liu/Edmonds: greedy best-incoming edges, then contract
/// a cycle (if any) and recurse.
fn solve(scores: &[Vec<f64>]) -> Result<Vec<usize>> {
    let m = scores.len();
    let mut best_in = vec![0usize; m];
    for c in 1..m {
        let mut best = f64::NEG_INFINITY;
        let mut best_p = usize::MAX;
        for (p, row) in scores.iter().enumerate() {
            if p != c && row[c] > best {
                best = row[c];
                best_p = p;
            }
        }
        if best_p == usize::MAX {
            return Err(Error::GraphDisconnected);
        }
        best_in[c] = best_p;
    }

    let Some(cycle) = find_cycle(&best_in) else {
        return Ok(best_in);
    };

    let in_cycle: Vec<bool> = {
        let mut v = vec![false; m];
        for &node in &cycle {
            v[node] = true;
        }
        v
    };
    let cycle_score: f64 = cycle.iter().map(|&v| scores[best_in[v]][v]).sum();

    // New ids: root 0, surviving nodes in order, contracted node last.
    let mut new_of_old = vec![usize::MAX; m];
    let mut old_of_new = vec![0usize];
    new_of_old[0] = 0;
    for v in 1..m {
        if !in_cycle[v] {
            new_of_old[v] = old_of_new.len();
            old_of_new.push(v);
        }
    }
    let cyc = old_of_new.len();
    let m2 = cyc + 1;

    let mut contracted = vec![vec![f64::NEG_INFINITY; m2]; m2];
    // Entry node into the cycle, per contracted-graph parent.
    let mut entry_of = vec![usize::MAX; m2];
    // Real in-cycle parent for edges leaving the cycle, per target.
    let mut exit_of = vec![usize::MAX; m2];
    for u in 0..m {
        for v in 1..m {
            let s = scores[u][v];
            if u == v || !s.is_finite() {
                continue;
            }
            match (in_cycle[u], in_cycle[v]) {
                (false, false) => {
                    contracted[new_of_old[u]][new_of_old[v]] = s;
                }
                (false, true) => {
                    let nu = new_of_old[u];
                    let adjusted = s + cycle_score - scores[best_in[v]][v];
                    if adjusted > contracted[nu][cyc] {
                        contracted[nu][cyc] = adjusted;
                        entry_of[nu] = v;
                    }
                }
                (true, false) => {
                    let nv = new_of_old[v];
                    if s > contracted[cyc][nv] {
                        contracted[cyc][nv] = s;
                        exit_of[nv] = u;
                    }
                }
                (true, true) => {}
            }
        }
    }

    let parent_new = solve(&contracted)?;

    let mut parent = vec![0usize; m];
    for nv in 1..m2 {
        if nv == cyc {
            continue;
        }
        let v = old_of_new[nv];
        let p = parent_new[nv];
        parent[v] = if p == cyc { exit_of[nv] } else { old_of_new[p] };
    }
    let p_cyc = parent_new[cyc];
    let entry = entry_of[p_cyc];
    if entry == usize::MAX {
        return Err(Error::MalformedTree("lost cycle entry".to_string()));
    }
    for &v in &cycle {
        parent[v] = if v == entry {
            old_of_new[p_cyc]
        } else {
            best_in[v]
        };
    }
    Ok(parent)
}

/// Any cycle in the best-incoming parent function, as its node list.
fn find_cycle(best_in: &[usize]) -> Option<Vec<usize>> {
    let m = best_in.len();
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; m];
    state[0] = 2;
    for start in 1..m {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            path.push(cur);
            cur = best_in[cur];
        }
        if state[cur] == 1 {
            let from = path.iter().position(|&v| v == cur).unwrap();
            let cycle = path[from..].to_vec();
            return Some(cycle);
        }
        for v in path {
            state[v] = 2;
        }
    }
    None
}

/// Reads clusters off an arborescence: each child-of-root subtree headed
/// by an entity becomes a linked cluster of its span descendants (dropped
/// when empty), and each span-headed subtree a NIL cluster.
pub fn extract_clusters(
    parent: &[usize],
    graph: &DocumentGraph,
    spans: &[Span],
    entities: &[CandidateEntity],
) -> Result<ClusterAnnotation> {
    let n = graph.n_nodes();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 1..n {
        children[parent[c]].push(c);
    }
    let mut clusters = Vec::new();
    for &head in &children[0] {
        let mut mentions = Vec::new();
        let mut stack = vec![head];
        let mut first = true;
        while let Some(node) = stack.pop() {
            match graph.node(node) {
                NodeRef::Root => {
                    return Err(Error::MalformedTree("root below root".to_string()))
                }
                NodeRef::Entity(_) if !first => {
                    return Err(Error::MalformedTree(
                        "entity node below a subtree head".to_string(),
                    ))
                }
                NodeRef::Entity(_) => {}
                NodeRef::Span(s) => mentions.push((spans[s].start, spans[s].end)),
            }
            first = false;
            stack.extend(children[node].iter().copied());
        }
        mentions.sort_unstable();
        match graph.node(head) {
            NodeRef::Entity(e) => {
                if !mentions.is_empty() {
                    clusters.push(Cluster {
                        mentions,
                        link: Some(entities[e].id.clone()),
                    });
                }
            }
            NodeRef::Span(_) => clusters.push(Cluster {
                mentions,
                link: None,
            }),
            NodeRef::Root => unreachable!(),
        }
    }
    Ok(ClusterAnnotation { clusters })
}

/// Greedy decoding for the local model: per-span argmax over its options,
/// union-find over span choices, then each cluster links to the
/// highest-scoring entity chosen by any member (ties toward the lower
/// entity id).
pub fn local_decode(
    spans: &[Span],
    entities: &[CandidateEntity],
    params: &ScorerParams,
) -> Result<ClusterAnnotation> {
    let (_, options) = local_scores(spans, entities, params)?;
    local_decode_options(&options, spans, entities)
}

/// [`local_decode`] over already computed option scores.
pub fn local_decode_options(
    options: &OptionScores,
    spans: &[Span],
    entities: &[CandidateEntity],
) -> Result<ClusterAnnotation> {
    let mut uf: Vec<usize> = (0..spans.len()).collect();
    fn find(uf: &mut Vec<usize>, x: usize) -> usize {
        if uf[x] != x {
            let root = find(uf, uf[x]);
            uf[x] = root;
        }
        uf[x]
    }
    let mut entity_choice: Vec<Option<(usize, f64)>> = vec![None; spans.len()];
    for (i, opts) in options.iter().enumerate() {
        let mut best: Option<(LocalOption, f64)> = None;
        for &(opt, score) in opts {
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((opt, score));
            }
        }
        match best.expect("dummy always present").0 {
            LocalOption::Antecedent(j) => {
                let (a, b) = (find(&mut uf, i), find(&mut uf, j));
                if a != b {
                    uf[a] = b;
                }
            }
            LocalOption::Entity(e) => {
                entity_choice[i] = Some((e, opts
                    .iter()
                    .find(|(o, _)| *o == LocalOption::Entity(e))
                    .unwrap()
                    .1));
            }
            LocalOption::Dummy => {}
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..spans.len() {
        let root = find(&mut uf, i);
        groups.entry(root).or_default().push(i);
    }
    let mut keys: Vec<usize> = groups.keys().copied().collect();
    keys.sort_unstable();
    let mut clusters = Vec::new();
    for key in keys {
        let members = &groups[&key];
        let mut link: Option<(usize, f64)> = None;
        for &i in members {
            if let Some((e, score)) = entity_choice[i] {
                let better = match link {
                    None => true,
                    Some((le, ls)) => {
                        score > ls || (score == ls && entities[e].id < entities[le].id)
                    }
                };
                if better {
                    link = Some((e, score));
                }
            }
        }
        let mut mentions: Vec<(usize, usize)> = members
            .iter()
            .map(|&i| (spans[i].start, spans[i].end))
            .collect();
        mentions.sort_unstable();
        clusters.push(Cluster {
            mentions,
            link: link.map(|(e, _)| entities[e].id.clone()),
        });
    }
    Ok(ClusterAnnotation { clusters })
}

/// Per-mention standalone linking baseline: every span is its own
/// singleton cluster, linked to its best-scoring candidate when that
/// candidate beats the dummy score 0, otherwise NIL. Coreference is not
/// modeled at all.
pub fn standalone_el_decode(
    spans: &[Span],
    entities: &[CandidateEntity],
    params: &ScorerParams,
) -> Result<ClusterAnnotation> {
    let by_id: HashMap<&str, usize> = entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let mut clusters = Vec::new();
    for span in spans {
        let mut best: Option<(usize, f64)> = None;
        for cand in &span.candidates {
            let e = *by_id
                .get(cand.as_str())
                .ok_or_else(|| Error::InvalidCandidate(cand.clone()))?;
            let score = params.link_score(&span.features, &entities[e].features)?;
            let better = match best {
                None => score > 0.0,
                Some((be, bs)) => {
                    score > bs || (score == bs && entities[e].id < entities[be].id)
                }
            };
            if better && score > 0.0 {
                best = Some((e, score));
            }
        }
        clusters.push(Cluster {
            mentions: vec![(span.start, span.end)],
            link: best.map(|(e, _)| entities[e].id.clone()),
        });
    }
    Ok(ClusterAnnotation { clusters })
}
