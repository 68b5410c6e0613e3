//! Exact tree-structured negative log-likelihood via the Matrix-Tree
//! Theorem: the root minor of the graph Laplacian gives the weight sum
//! over all spanning arborescences, and per-cluster modified Laplacians
//! give the weight sums over each gold cluster's valid subtrees. Includes
//! analytic gradients and brute-force enumeration oracles.
//!
//! All determinants are taken over exponential weights shifted by the
//! graph's maximum finite score; every log-determinant is corrected by
//! `size * shift` afterwards, so reported quantities are shift-invariant.

use crate::error::{Error, Result};
use crate::graph::{AlignedGold, DocumentGraph, NodeRef};
use crate::linalg;

/// One matrix entry fed by one edge: `matrix[row][col] += sign * weight`.
#[derive(Debug, Clone, Copy)]
struct Contrib {
    row: usize,
    col: usize,
    parent: usize,
    child: usize,
    weight: f64,
    sign: f64,
}

/// The Laplacian of the document graph with the root row and column
/// removed, over shifted exponential weights.
#[derive(Debug, Clone)]
pub struct LaplacianView {
    pub matrix: Vec<Vec<f64>>,
    /// Non-root nodes in graph order; `nodes[i]` labels matrix index i.
    pub nodes: Vec<NodeRef>,
    /// Stabilizing shift subtracted from every score before exponentiation.
    pub shift: f64,
    contribs: Vec<Contrib>,
}

/// Builds the root minor: column diagonals hold total incoming exponential
/// weight (root included), off-diagonals hold negated edge weights.
pub fn laplacian_minor(graph: &DocumentGraph) -> LaplacianView {
    let n = graph.n_nodes() - 1;
    let shift = graph.max_finite_score();
    let mut matrix = vec![vec![0.0; n]; n];
    let mut contribs = Vec::new();
    for (p, c) in graph.legal_edges() {
        let score = graph.scores[p][c];
        if !score.is_finite() {
            continue;
        }
        let weight = (score - shift).exp();
        let j = c - 1;
        matrix[j][j] += weight;
        contribs.push(Contrib {
            row: j,
            col: j,
            parent: p,
            child: c,
            weight,
            sign: 1.0,
        });
        if p != 0 {
            let i = p - 1;
            matrix[i][j] -= weight;
            contribs.push(Contrib {
                row: i,
                col: j,
                parent: p,
                child: c,
                weight,
                sign: -1.0,
            });
        }
    }
    let nodes = (1..=n).map(|i| graph.node(i)).collect();
    LaplacianView {
        matrix,
        nodes,
        shift,
        contribs,
    }
}

/// Modified Laplacian for one cluster of the masked graph: first row holds
/// the masked root-selection weights, remaining rows the within-cluster
/// Laplacian rows. Its determinant sums the weights of all cluster trees
/// with a single attachment to the root.
#[derive(Debug, Clone)]
pub struct ClusterLaplacian {
    pub matrix: Vec<Vec<f64>>,
    /// Graph node indices, linked entity first when present.
    pub nodes: Vec<usize>,
    pub shift: f64,
    contribs: Vec<Contrib>,
}

pub fn cluster_laplacian(masked: &DocumentGraph, nodes: &[usize]) -> ClusterLaplacian {
    let k = nodes.len();
    let shift = masked.max_finite_score();
    let mut matrix = vec![vec![0.0; k]; k];
    let mut contribs = Vec::new();
    for (j, &child) in nodes.iter().enumerate() {
        if masked.is_legal(0, child) && masked.scores[0][child].is_finite() {
            let weight = (masked.scores[0][child] - shift).exp();
            matrix[0][j] += weight;
            contribs.push(Contrib {
                row: 0,
                col: j,
                parent: 0,
                child,
                weight,
                sign: 1.0,
            });
        }
    }
    for (i, &parent) in nodes.iter().enumerate() {
        for (j, &child) in nodes.iter().enumerate() {
            if i == j || !masked.is_legal(parent, child) {
                continue;
            }
            let score = masked.scores[parent][child];
            if !score.is_finite() {
                continue;
            }
            let weight = (score - shift).exp();
            if j != 0 {
                matrix[j][j] += weight;
                contribs.push(Contrib {
                    row: j,
                    col: j,
                    parent,
                    child,
                    weight,
                    sign: 1.0,
                });
            }
            if i != 0 {
                matrix[i][j] -= weight;
                contribs.push(Contrib {
                    row: i,
                    col: j,
                    parent,
                    child,
                    weight,
                    sign: -1.0,
                });
            }
        }
    }
    ClusterLaplacian {
        matrix,
        nodes: nodes.to_vec(),
        shift,
        contribs,
    }
}

/// Log of the weight sum over all spanning arborescences rooted at the
/// root node.
pub fn log_partition(graph: &DocumentGraph) -> Result<f64> {
    let view = laplacian_minor(graph);
    let (log_mag, sign) = linalg::log_det(&view.matrix);
    if sign <= 0 || !log_mag.is_finite() {
        return Err(Error::GraphDisconnected);
    }
    Ok(log_mag + view.nodes.len() as f64 * view.shift)
}

/// Log of the weight sum over all valid trees of one gold cluster in the
/// masked graph.
pub fn cluster_log_weight(masked: &DocumentGraph, nodes: &[usize], index: usize) -> Result<f64> {
    let view = cluster_laplacian(masked, nodes);
    let (log_mag, sign) = linalg::log_det(&view.matrix);
    if sign <= 0 || !log_mag.is_finite() {
        return Err(Error::ClusterUnreachable { index });
    }
    Ok(log_mag + nodes.len() as f64 * view.shift)
}

/// Negative log-likelihood of the gold clustering: log partition of the
/// full graph minus the summed cluster log-weights of the masked graph.
pub fn global_nll(
    graph: &DocumentGraph,
    masked: &DocumentGraph,
    aligned: &AlignedGold,
) -> Result<f64> {
    let mut nll = log_partition(graph)?;
    for (index, nodes) in aligned.clusters.iter().enumerate() {
        nll -= cluster_log_weight(masked, nodes, index)?;
    }
    Ok(nll)
}

/// Gradient of [`global_nll`] with respect to every edge score; zero on
/// illegal edges. The partition-term component of each edge's gradient is
/// its marginal probability of appearing in a random arborescence.
pub fn global_nll_grad(
    graph: &DocumentGraph,
    masked: &DocumentGraph,
    aligned: &AlignedGold,
) -> Result<Vec<Vec<f64>>> {
    let n = graph.n_nodes();
    let mut grad = vec![vec![0.0; n]; n];
    let minor = laplacian_minor(graph);
    let inv = linalg::inverse(&minor.matrix).ok_or(Error::GraphDisconnected)?;
    for c in &minor.contribs {
        // d log det(M) / d M[row][col] = inv[col][row]
        grad[c.parent][c.child] += c.sign * c.weight * inv[c.col][c.row];
    }
    for (index, nodes) in aligned.clusters.iter().enumerate() {
        let view = cluster_laplacian(masked, nodes);
        let inv = linalg::inverse(&view.matrix).ok_or(Error::ClusterUnreachable { index })?;
        for c in &view.contribs {
            grad[c.parent][c.child] -= c.sign * c.weight * inv[c.col][c.row];
        }
    }
    Ok(grad)
}

/// Marginal probability of each edge appearing in a random arborescence of
/// the full graph (the partition term of the gradient alone).
pub fn edge_marginals(graph: &DocumentGraph) -> Result<Vec<Vec<f64>>> {
    let n = graph.n_nodes();
    let mut marginals = vec![vec![0.0; n]; n];
    let minor = laplacian_minor(graph);
    let inv = linalg::inverse(&minor.matrix).ok_or(Error::GraphDisconnected)?;
    for c in &minor.contribs {
        marginals[c.parent][c.child] += c.sign * c.weight * inv[c.col][c.row];
    }
    Ok(marginals)
}

/// Brute-force oracle: every spanning arborescence rooted at the root,
/// with its total score, in deterministic (node-major, parent-ascending)
/// order.
pub fn enumerate_arborescences(
    graph: &DocumentGraph,
    cap: usize,
) -> Result<Vec<(Vec<(usize, usize)>, f64)>> {
    let n = graph.n_nodes() - 1;
    if n > cap {
        return Err(Error::OracleTooLarge { nodes: n, cap });
    }
    let parents_per_node: Vec<Vec<usize>> = (1..=n)
        .map(|child| {
            (0..=n)
                .filter(|&p| {
                    p != child && graph.is_legal(p, child) && graph.scores[p][child].is_finite()
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut assignment = vec![0usize; n + 1];
    enumerate_rec(graph, &parents_per_node, 1, &mut assignment, &mut out);
    Ok(out)
}

fn enumerate_rec(
    graph: &DocumentGraph,
    parents_per_node: &[Vec<usize>],
    node: usize,
    assignment: &mut Vec<usize>,
    out: &mut Vec<(Vec<(usize, usize)>, f64)>,
) {
    let n = parents_per_node.len();
    if node > n {
        if is_arborescence(assignment) {
            let edges: Vec<(usize, usize)> = (1..=n).map(|c| (assignment[c], c)).collect();
            let score = edges.iter().map(|&(p, c)| graph.scores[p][c]).sum();
            out.push((edges, score));
        }
        return;
    }
    for &p in &parents_per_node[node - 1] {
        assignment[node] = p;
        enumerate_rec(graph, parents_per_node, node + 1, assignment, out);
    }
}

/// A parent assignment is an arborescence iff every node reaches the root.
fn is_arborescence(assignment: &[usize]) -> bool {
    let n = assignment.len() - 1;
    for start in 1..=n {
        let mut cur = start;
        let mut steps = 0;
        while cur != 0 {
            cur = assignment[cur];
            steps += 1;
            if steps > n {
                return false; // cycle
            }
        }
    }
    true
}

/// Brute-force oracle for one cluster: every tree over the cluster's nodes
/// using masked edges, attached to the root by exactly one edge.
pub fn enumerate_cluster_trees(
    masked: &DocumentGraph,
    nodes: &[usize],
) -> Vec<(Vec<(usize, usize)>, f64)> {
    let k = nodes.len();
    // Parent options per cluster node: the root or another cluster node,
    // along a masked-legal finite edge.
    let parents_per_node: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&child| {
            let mut opts = Vec::new();
            if masked.is_legal(0, child) && masked.scores[0][child].is_finite() {
                opts.push(0);
            }
            for &p in nodes {
                if p != child && masked.is_legal(p, child) && masked.scores[p][child].is_finite() {
                    opts.push(p);
                }
            }
            opts
        })
        .collect();
    let mut out = Vec::new();
    let mut assignment = vec![0usize; k];
    cluster_rec(masked, nodes, &parents_per_node, 0, &mut assignment, &mut out);
    out
}

fn cluster_rec(
    masked: &DocumentGraph,
    nodes: &[usize],
    parents_per_node: &[Vec<usize>],
    idx: usize,
    assignment: &mut Vec<usize>,
    out: &mut Vec<(Vec<(usize, usize)>, f64)>,
) {
    let k = nodes.len();
    if idx == k {
        let root_edges = assignment.iter().filter(|&&p| p == 0).count();
        if root_edges != 1 {
            return;
        }
        // Acyclicity over cluster nodes.
        let pos: std::collections::HashMap<usize, usize> =
            nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        for start in 0..k {
            let mut cur = start;
            let mut steps = 0;
            loop {
                let p = assignment[cur];
                if p == 0 {
                    break;
                }
                cur = pos[&p];
                steps += 1;
                if steps > k {
                    return;
                }
            }
        }
        let edges: Vec<(usize, usize)> = (0..k).map(|i| (assignment[i], nodes[i])).collect();
        let score = edges.iter().map(|&(p, c)| masked.scores[p][c]).sum();
        out.push((edges, score));
        return;
    }
    for &p in &parents_per_node[idx] {
        assignment[idx] = p;
        cluster_rec(masked, nodes, parents_per_node, idx + 1, assignment, out);
    }
}

/// Log-sum-exp of enumerated tree scores; `-inf` for an empty set.
pub fn log_sum_scores(trees: &[(Vec<(usize, usize)>, f64)]) -> f64 {
    let max = trees
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + trees.iter().map(|(_, s)| (s - max).exp()).sum::<f64>().ln()
}
