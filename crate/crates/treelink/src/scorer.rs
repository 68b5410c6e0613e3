//! Parametric score functions over feature vectors: the unary pruning
//! score, the pairwise coreference score over
//! `[parent; child; parent ⊙ child; distance-bucket one-hot]`, and the
//! linking score over `[span; entity]`, each realized by a small head
//! (linear by default, one tanh hidden layer when configured), with exact
//! parameter gradients.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::{CandidateEntity, DocumentGraph, NodeRef, Span};

/// A scalar-valued scoring head.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Linear {
        w: Vec<f64>,
        b: f64,
    },
    /// One hidden tanh layer: `w2 . tanh(W1 x + b1) + b2`.
    Tanh {
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
}

impl Head {
    fn input_dim(&self) -> usize {
        match self {
            Head::Linear { w, .. } => w.len(),
            Head::Tanh { w1, .. } => w1.first().map_or(0, |row| row.len()),
        }
    }

    fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::FeatureDim {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        match self {
            Head::Linear { w, b } => Ok(dot(w, x) + b),
            Head::Tanh { w1, b1, w2, b2 } => {
                let mut out = *b2;
                for (row, (&bias, &wo)) in w1.iter().zip(b1.iter().zip(w2.iter())) {
                    out += wo * (dot(row, x) + bias).tanh();
                }
                Ok(out)
            }
        }
    }

    /// Accumulates `upstream * d(out)/d(params)` into `grad` and, when
    /// `dx` is given, adds `upstream * d(out)/d(x)` into it.
    fn backward(&self, x: &[f64], upstream: f64, grad: &mut HeadGrad, mut dx: Option<&mut [f64]>) {
        match (self, grad) {
            (Head::Linear { w, .. }, HeadGrad::Linear { w: gw, b: gb }) => {
                for (g, &xi) in gw.iter_mut().zip(x) {
                    *g += upstream * xi;
                }
                *gb += upstream;
                if let Some(dx) = dx.as_deref_mut() {
                    for (d, &wi) in dx.iter_mut().zip(w) {
                        *d += upstream * wi;
                    }
                }
            }
            (
                Head::Tanh { w1, b1, w2, .. },
                HeadGrad::Tanh {
                    w1: gw1,
                    b1: gb1,
                    w2: gw2,
                    b2: gb2,
                },
            ) => {
                *gb2 += upstream;
                for r in 0..w1.len() {
                    let t = (dot(&w1[r], x) + b1[r]).tanh();
                    gw2[r] += upstream * t;
                    let dpre = upstream * w2[r] * (1.0 - t * t);
                    gb1[r] += dpre;
                    for (g, &xi) in gw1[r].iter_mut().zip(x) {
                        *g += dpre * xi;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        for (d, &wi) in dx.iter_mut().zip(&w1[r]) {
                            *d += dpre * wi;
                        }
                    }
                }
            }
            _ => unreachable!("gradient shape always mirrors the head"),
        }
    }

    fn zero_grad(&self) -> HeadGrad {
        match self {
            Head::Linear { w, .. } => HeadGrad::Linear {
                w: vec![0.0; w.len()],
                b: 0.0,
            },
            Head::Tanh { w1, b1, w2, .. } => HeadGrad::Tanh {
                w1: w1.iter().map(|row| vec![0.0; row.len()]).collect(),
                b1: vec![0.0; b1.len()],
                w2: vec![0.0; w2.len()],
                b2: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub enum HeadGrad {
    Linear {
        w: Vec<f64>,
        b: f64,
    },
    Tanh {
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
}

/// Parameters of all score functions plus the learned root feature vector
/// and the span-distance bucket boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub prune: Head,
    pub pair: Head,
    pub link: Head,
    pub root_features: Vec<f64>,
    /// Strictly increasing boundaries; bucket index of distance d is the
    /// number of boundaries <= d, so distance 0 (reserved for the root as
    /// parent) always falls in bucket 0.
    pub distance_buckets: Vec<usize>,
    pub d_span: usize,
    pub d_entity: usize,
}

/// Default distance-bucket boundaries: 1, 2, 3, 4, 5-7, 8-15, 16-31,
/// 32-63, 64+ (plus bucket 0 for the root).
pub fn default_distance_buckets() -> Vec<usize> {
    vec![1, 2, 3, 4, 5, 8, 16, 32, 64]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ScorerParams {
    /// Number of distance buckets (one-hot width).
    pub fn n_buckets(&self) -> usize {
        self.distance_buckets.len() + 1
    }

    pub fn bucket_index(&self, distance: usize) -> usize {
        self.distance_buckets
            .iter()
            .take_while(|&&b| b <= distance)
            .count()
    }

    /// Zero-initialized linear scorer (every score is 0).
    pub fn zeros(d_span: usize, d_entity: usize, buckets: Vec<usize>) -> ScorerParams {
        let n_buckets = buckets.len() + 1;
        ScorerParams {
            prune: Head::Linear {
                w: vec![0.0; d_span],
                b: 0.0,
            },
            pair: Head::Linear {
                w: vec![0.0; 3 * d_span + n_buckets],
                b: 0.0,
            },
            link: Head::Linear {
                w: vec![0.0; d_span + d_entity],
                b: 0.0,
            },
            root_features: vec![0.0; d_span],
            distance_buckets: buckets,
            d_span,
            d_entity,
        }
    }

    /// Seeded uniform [-0.1, 0.1] initialization; `hidden` switches every
    /// head to the one-hidden-layer tanh variant.
    pub fn init(
        d_span: usize,
        d_entity: usize,
        hidden: Option<usize>,
        buckets: Vec<usize>,
        seed: u64,
    ) -> ScorerParams {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sample = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-0.1..=0.1)).collect()
        };
        let n_buckets = buckets.len() + 1;
        let mut head = |dim: usize| match hidden {
            None => Head::Linear {
                w: sample(dim),
                b: sample(1)[0],
            },
            Some(h) => Head::Tanh {
                w1: (0..h).map(|_| sample(dim)).collect(),
                b1: sample(h),
                w2: sample(h),
                b2: sample(1)[0],
            },
        };
        let prune = head(d_span);
        let pair = head(3 * d_span + n_buckets);
        let link = head(d_span + d_entity);
        let root_features = sample(d_span);
        ScorerParams {
            prune,
            pair,
            link,
            root_features,
            distance_buckets: buckets,
            d_span,
            d_entity,
        }
    }

    pub fn pruning_score(&self, span_features: &[f64]) -> Result<f64> {
        self.prune.forward(span_features)
    }

    fn pair_input(&self, parent: &[f64], child: &[f64], distance: usize) -> Result<Vec<f64>> {
        if parent.len() != self.d_span || child.len() != self.d_span {
            return Err(Error::FeatureDim {
                expected: self.d_span,
                got: if parent.len() != self.d_span {
                    parent.len()
                } else {
                    child.len()
                },
            });
        }
        let mut x = Vec::with_capacity(3 * self.d_span + self.n_buckets());
        x.extend_from_slice(parent);
        x.extend_from_slice(child);
        x.extend(parent.iter().zip(child).map(|(a, b)| a * b));
        let bucket = self.bucket_index(distance);
        for k in 0..self.n_buckets() {
            x.push(if k == bucket { 1.0 } else { 0.0 });
        }
        Ok(x)
    }

    pub fn pair_score(&self, parent: &[f64], child: &[f64], distance: usize) -> Result<f64> {
        self.pair.forward(&self.pair_input(parent, child, distance)?)
    }

    fn link_input(&self, span: &[f64], entity: &[f64]) -> Result<Vec<f64>> {
        if span.len() != self.d_span {
            return Err(Error::FeatureDim {
                expected: self.d_span,
                got: span.len(),
            });
        }
        if entity.len() != self.d_entity {
            return Err(Error::FeatureDim {
                expected: self.d_entity,
                got: entity.len(),
            });
        }
        let mut x = Vec::with_capacity(self.d_span + self.d_entity);
        x.extend_from_slice(span);
        x.extend_from_slice(entity);
        Ok(x)
    }

    pub fn link_score(&self, span: &[f64], entity: &[f64]) -> Result<f64> {
        self.link.forward(&self.link_input(span, entity)?)
    }

    /// Indices of the `n` highest-scoring spans, document order preserved,
    /// ties broken toward the earlier span.
    pub fn prune_spans(&self, spans: &[Span], n: usize) -> Result<Vec<usize>> {
        let mut scored: Vec<(usize, f64)> = spans
            .iter()
            .enumerate()
            .map(|(i, s)| Ok((i, self.pruning_score(&s.features)?)))
            .collect::<Result<_>>()?;
        // Stable sort keeps earlier (start, end) first on ties, since the
        // input is in document order.
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let mut kept: Vec<usize> = scored.into_iter().take(n).map(|(i, _)| i).collect();
        kept.sort_unstable();
        Ok(kept)
    }

    /// Chain rule from per-edge loss gradients to parameter gradients.
    ///
    /// `dloss_dscore[p][c]` must cover the full node grid; entries on
    /// illegal edges are ignored.
    pub fn accumulate_param_grads(
        &self,
        graph: &DocumentGraph,
        dloss_dscore: &[Vec<f64>],
        spans: &[Span],
        entities: &[CandidateEntity],
    ) -> Result<ScorerGrads> {
        let n = graph.n_nodes();
        if dloss_dscore.len() != n || dloss_dscore.iter().any(|row| row.len() != n) {
            return Err(Error::GradShape(format!(
                "expected {n}x{n} edge gradient matrix"
            )));
        }
        let mut grads = ScorerGrads::zeros(self);
        for (p, c) in graph.legal_edges() {
            let g = dloss_dscore[p][c];
            if g == 0.0 {
                continue;
            }
            match (graph.node(p), graph.node(c)) {
                (NodeRef::Root, NodeRef::Entity(_)) => {}
                (NodeRef::Root, NodeRef::Span(j)) => {
                    self.prune.backward(&spans[j].features, g, &mut grads.prune, None);
                    let x = self.pair_input(&self.root_features, &spans[j].features, 0)?;
                    let mut dx = vec![0.0; x.len()];
                    self.pair.backward(&x, g, &mut grads.pair, Some(&mut dx));
                    // Root features enter as the parent block and inside
                    // the hadamard block.
                    for k in 0..self.d_span {
                        grads.root_features[k] +=
                            dx[k] + dx[2 * self.d_span + k] * spans[j].features[k];
                    }
                }
                (NodeRef::Entity(e), NodeRef::Span(j)) => {
                    self.prune.backward(&spans[j].features, g, &mut grads.prune, None);
                    let x = self.link_input(&spans[j].features, &entities[e].features)?;
                    self.link.backward(&x, g, &mut grads.link, None);
                }
                (NodeRef::Span(i), NodeRef::Span(j)) => {
                    self.prune.backward(&spans[i].features, g, &mut grads.prune, None);
                    self.prune.backward(&spans[j].features, g, &mut grads.prune, None);
                    let x =
                        self.pair_input(&spans[i].features, &spans[j].features, i.abs_diff(j))?;
                    self.pair.backward(&x, g, &mut grads.pair, None);
                }
                _ => unreachable!("illegal edge in legal set"),
            }
        }
        Ok(grads)
    }

    /// All trainable parameters as one flat vector (heads then root
    /// features); ordering matches [`ScorerGrads::flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for head in [&self.prune, &self.pair, &self.link] {
            match head {
                Head::Linear { w, b } => {
                    v.extend_from_slice(w);
                    v.push(*b);
                }
                Head::Tanh { w1, b1, w2, b2 } => {
                    for row in w1 {
                        v.extend_from_slice(row);
                    }
                    v.extend_from_slice(b1);
                    v.extend_from_slice(w2);
                    v.push(*b2);
                }
            }
        }
        v.extend_from_slice(&self.root_features);
        v
    }

    /// Overwrites all trainable parameters from a flat vector.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.flat().len();
        if values.len() != expected {
            return Err(Error::GradShape(format!(
                "expected {expected} flat parameters, got {}",
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        let mut next = || it.next().unwrap();
        for head in [&mut self.prune, &mut self.pair, &mut self.link] {
            match head {
                Head::Linear { w, b } => {
                    for x in w.iter_mut() {
                        *x = next();
                    }
                    *b = next();
                }
                Head::Tanh { w1, b1, w2, b2 } => {
                    for row in w1.iter_mut() {
                        for x in row.iter_mut() {
                            *x = next();
                        }
                    }
                    for x in b1.iter_mut() {
                        *x = next();
                    }
                    for x in w2.iter_mut() {
                        *x = next();
                    }
                    *b2 = next();
                }
            }
        }
        for x in self.root_features.iter_mut() {
            *x = next();
        }
        Ok(())
    }

    /// Gradient step `theta -= lr * grad`.
    pub fn apply_gradient(&mut self, grads: &ScorerGrads, lr: f64) {
        let mut flat = self.flat();
        for (p, g) in flat.iter_mut().zip(grads.flat()) {
            *p -= lr * g;
        }
        self.set_flat(&flat).expect("self-consistent flat shape");
    }

    /// Flat JSON object of named float arrays.
    pub fn to_named(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        let hidden = match &self.prune {
            Head::Linear { .. } => 0,
            Head::Tanh { b1, .. } => b1.len(),
        };
        out.insert(
            "dims".to_string(),
            vec![self.d_span as f64, self.d_entity as f64, hidden as f64],
        );
        out.insert(
            "distance_buckets".to_string(),
            self.distance_buckets.iter().map(|&b| b as f64).collect(),
        );
        for (name, head) in [
            ("prune", &self.prune),
            ("pair", &self.pair),
            ("link", &self.link),
        ] {
            match head {
                Head::Linear { w, b } => {
                    out.insert(format!("{name}.w"), w.clone());
                    out.insert(format!("{name}.b"), vec![*b]);
                }
                Head::Tanh { w1, b1, w2, b2 } => {
                    out.insert(format!("{name}.w1"), w1.concat());
                    out.insert(format!("{name}.b1"), b1.clone());
                    out.insert(format!("{name}.w2"), w2.clone());
                    out.insert(format!("{name}.b2"), vec![*b2]);
                }
            }
        }
        out.insert("root_features".to_string(), self.root_features.clone());
        out
    }

    pub fn from_named(named: &BTreeMap<String, Vec<f64>>) -> Result<ScorerParams> {
        let get = |key: &str| -> Result<&Vec<f64>> {
            named.get(key).ok_or_else(|| Error::Parse {
                path: format!("$.{key}"),
                msg: "missing parameter array".to_string(),
            })
        };
        let dims = get("dims")?;
        if dims.len() != 3 {
            return Err(Error::Parse {
                path: "$.dims".to_string(),
                msg: "expected [d_span, d_entity, hidden]".to_string(),
            });
        }
        let (d_span, d_entity, hidden) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
        let buckets: Vec<usize> = get("distance_buckets")?.iter().map(|&b| b as usize).collect();
        let n_buckets = buckets.len() + 1;
        let load_head = |name: &str, dim: usize| -> Result<Head> {
            if hidden == 0 {
                Ok(Head::Linear {
                    w: get(&format!("{name}.w"))?.clone(),
                    b: get(&format!("{name}.b"))?[0],
                })
            } else {
                let flat_w1 = get(&format!("{name}.w1"))?;
                if flat_w1.len() != hidden * dim {
                    return Err(Error::Parse {
                        path: format!("$.{name}.w1"),
                        msg: format!("expected {} values, got {}", hidden * dim, flat_w1.len()),
                    });
                }
                Ok(Head::Tanh {
                    w1: flat_w1.chunks(dim).map(|c| c.to_vec()).collect(),
                    b1: get(&format!("{name}.b1"))?.clone(),
                    w2: get(&format!("{name}.w2"))?.clone(),
                    b2: get(&format!("{name}.b2"))?[0],
                })
            }
        };
        Ok(ScorerParams {
            prune: load_head("prune", d_span)?,
            pair: load_head("pair", 3 * d_span + n_buckets)?,
            link: load_head("link", d_span + d_entity)?,
            root_features: get("root_features")?.clone(),
            distance_buckets: buckets,
            d_span,
            d_entity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_named()).expect("serializable map");
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ScorerParams> {
        let bytes = fs::read(path)?;
        let named: BTreeMap<String, Vec<f64>> =
            serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
        ScorerParams::from_named(&named)
    }
}

/// Parameter gradients, mirroring [`ScorerParams`].
#[derive(Debug, Clone)]
pub struct ScorerGrads {
    pub prune: HeadGrad,
    pub pair: HeadGrad,
    pub link: HeadGrad,
    pub root_features: Vec<f64>,
}

impl ScorerGrads {
    pub fn zeros(params: &ScorerParams) -> ScorerGrads {
        ScorerGrads {
            prune: params.prune.zero_grad(),
            pair: params.pair.zero_grad(),
            link: params.link.zero_grad(),
            root_features: vec![0.0; params.root_features.len()],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for head in [&self.prune, &self.pair, &self.link] {
            match head {
                HeadGrad::Linear { w, b } => {
                    v.extend_from_slice(w);
                    v.push(*b);
                }
                HeadGrad::Tanh { w1, b1, w2, b2 } => {
                    for row in w1 {
                        v.extend_from_slice(row);
                    }
                    v.extend_from_slice(b1);
                    v.extend_from_slice(w2);
                    v.push(*b2);
                }
            }
        }
        v.extend_from_slice(&self.root_features);
        v
    }

    pub fn add(&mut self, other: &ScorerGrads) {
        add_head(&mut self.prune, &other.prune);
        add_head(&mut self.pair, &other.pair);
        add_head(&mut self.link, &other.link);
        for (a, b) in self.root_features.iter_mut().zip(&other.root_features) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        scale_head(&mut self.prune, factor);
        scale_head(&mut self.pair, factor);
        scale_head(&mut self.link, factor);
        for x in self.root_features.iter_mut() {
            *x *= factor;
        }
    }
}

fn add_head(a: &mut HeadGrad, b: &HeadGrad) {
    match (a, b) {
        (HeadGrad::Linear { w, b: ab }, HeadGrad::Linear { w: ow, b: ob }) => {
            for (x, y) in w.iter_mut().zip(ow) {
                *x += y;
            }
            *ab += ob;
        }
        (
            HeadGrad::Tanh { w1, b1, w2, b2 },
            HeadGrad::Tanh {
                w1: ow1,
                b1: ob1,
                w2: ow2,
                b2: ob2,
            },
        ) => {
            for (row, orow) in w1.iter_mut().zip(ow1) {
                for (x, y) in row.iter_mut().zip(orow) {
                    *x += y;
                }
            }
            for (x, y) in b1.iter_mut().zip(ob1) {
                *x += y;
            }
            for (x, y) in w2.iter_mut().zip(ow2) {
                *x += y;
            }
            *b2 += ob2;
        }
        _ => unreachable!("gradient shapes always match"),
    }
}

fn scale_head(a: &mut HeadGrad, factor: f64) {
    match a {
        HeadGrad::Linear { w, b } => {
            for x in w.iter_mut() {
                *x *= factor;
            }
            *b *= factor;
        }
        HeadGrad::Tanh { w1, b1, w2, b2 } => {
            for row in w1.iter_mut() {
                for x in row.iter_mut() {
                    *x *= factor;
                }
            }
            for x in b1.iter_mut() {
                *x *= factor;
            }
            for x in w2.iter_mut() {
                *x *= factor;
            }
            *b2 *= factor;
        }
    }
}
