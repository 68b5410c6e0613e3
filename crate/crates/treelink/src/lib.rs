//! Joint entity linking and coreference resolution as structured
//! prediction over directed trees.
//!
//! A document is modeled as a graph whose nodes are a virtual root, the
//! candidate knowledge-base entities, and the mention spans. Every
//! spanning arborescence of that graph encodes one joint clustering-and-
//! linking decision: subtrees hanging off an entity node are linked
//! clusters, subtrees hanging directly off the root are NIL clusters.
//!
//! The crate provides:
//! - the probabilistic **global** model, whose partition function and gold
//!   cluster weights are computed exactly with the Matrix-Tree Theorem
//!   ([`mtt`]), trained by gradient descent ([`train`]) and decoded with
//!   Chu-Liu/Edmonds maximum arborescence ([`decode`]);
//! - a **local** antecedent-ranking baseline over the same scores
//!   ([`local`]);
//! - coreference and entity-linking evaluation ([`metrics`]);
//! - a JSON Lines interchange format and the `treelink` CLI ([`data`]).

pub mod data;
pub mod decode;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod linalg;
pub mod local;
pub mod metrics;
pub mod mtt;
pub mod scorer;
pub mod train;

pub use error::{Error, Result};
