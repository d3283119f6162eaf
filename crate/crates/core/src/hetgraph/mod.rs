//! Typed heterogeneous graphs, meta-path view induction and local ego views.

mod local;
mod metapath;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

pub use local::{extract_local_views, LocalView, LocalViewSet};
pub use metapath::{induce_view, MetaPath, MetaPathView, Step, TargetData};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub node_types: Vec<String>,
    pub relations: Vec<Relation>,
}

impl Schema {
    pub fn node_type(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t == name)
    }

    pub fn relation(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Heterogeneous graph. Per-type vectors (`node_counts`, `features`) follow
/// `schema.node_types`; `edges` follows `schema.relations`. Labels and splits
/// refer to nodes of `target_type`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub schema: Schema,
    pub node_counts: Vec<usize>,
    pub edges: Vec<Vec<(usize, usize)>>,
    pub features: Vec<Matrix>,
    pub target_type: usize,
    pub num_classes: usize,
    pub labels: Vec<usize>,
    pub splits: Splits,
}

/// One failed invariant, with where it was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl HeteroGraph {
    pub fn target_count(&self) -> usize {
        self.node_counts[self.target_type]
    }

    pub fn target_features(&self) -> &Matrix {
        &self.features[self.target_type]
    }

    pub fn total_nodes(&self) -> usize {
        self.node_counts.iter().sum()
    }

    pub fn total_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Checks every structural invariant; an empty result means the graph is
    /// well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |location: String, message: String| out.push(Violation { location, message });
        let schema = &self.schema;

        let mut seen = HashSet::new();
        for t in &schema.node_types {
            if !seen.insert(t.as_str()) {
                push(format!("schema.node_types[{t}]"), "duplicate node type".into());
            }
        }
        let mut seen = HashSet::new();
        let mut endpoints_ok = Vec::with_capacity(schema.relations.len());
        for r in &schema.relations {
            if !seen.insert(r.name.as_str()) {
                push(format!("schema.relations[{}]", r.name), "duplicate relation".into());
            }
            let s = schema.node_type(&r.source);
            let t = schema.node_type(&r.target);
            for (end, name) in [(s, &r.source), (t, &r.target)] {
                if end.is_none() {
                    push(
                        format!("schema.relations[{}]", r.name),
                        format!("unknown node type {name:?}"),
                    );
                }
            }
            endpoints_ok.push(s.zip(t));
        }

        let n_types = schema.node_types.len();
        if self.node_counts.len() != n_types {
            push(
                "node_counts".into(),
                format!("{} counts for {n_types} node types", self.node_counts.len()),
            );
        }
        if self.features.len() != n_types {
            push(
                "features".into(),
                format!("{} feature matrices for {n_types} node types", self.features.len()),
            );
        }
        for (i, (f, &n)) in self.features.iter().zip(&self.node_counts).enumerate() {
            if f.rows() != n {
                push(
                    format!("features[{}]", schema.node_types[i]),
                    format!("{} rows for {n} nodes", f.rows()),
                );
            }
            if !f.all_finite() {
                push(
                    format!("features[{}]", schema.node_types[i]),
                    "non-finite value".into(),
                );
            }
        }

        if self.edges.len() != schema.relations.len() {
            push(
                "edges".into(),
                format!(
                    "{} edge lists for {} relations",
                    self.edges.len(),
                    schema.relations.len()
                ),
            );
        }
        for ((rel, list), ends) in schema.relations.iter().zip(&self.edges).zip(&endpoints_ok) {
            let Some((s, t)) = *ends else { continue };
            let (Some(&ns), Some(&nt)) = (self.node_counts.get(s), self.node_counts.get(t)) else {
                continue;
            };
            for (k, &(a, b)) in list.iter().enumerate() {
                if a >= ns {
                    push(
                        format!("edges[{}][{k}]", rel.name),
                        format!("source index {a} out of range for {ns} {} nodes", rel.source),
                    );
                }
                if b >= nt {
                    push(
                        format!("edges[{}][{k}]", rel.name),
                        format!("target index {b} out of range for {nt} {} nodes", rel.target),
                    );
                }
            }
        }

        let Some(&n_target) = self.node_counts.get(self.target_type) else {
            push("target_type".into(), format!("index {} out of range", self.target_type));
            return out;
        };
        if self.num_classes < 1 {
            push("num_classes".into(), "must be at least 1".into());
        }
        if self.labels.len() != n_target {
            push(
                "labels".into(),
                format!("{} labels for {n_target} target nodes", self.labels.len()),
            );
        }
        for (i, &y) in self.labels.iter().enumerate() {
            if y >= self.num_classes {
                push(
                    format!("labels[{i}]"),
                    format!("label {y} outside [0, {})", self.num_classes),
                );
            }
        }
        let mut owner = vec![None::<&str>; n_target];
        for (name, set) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            for &i in set {
                if i >= n_target {
                    push(
                        format!("splits.{name}"),
                        format!("index {i} out of range for {n_target} target nodes"),
                    );
                    continue;
                }
                if let Some(prev) = owner[i] {
                    push(
                        format!("splits.{name}"),
                        format!("node {i} already in {prev}"),
                    );
                } else {
                    owner[i] = Some(name);
                }
            }
        }
        out
    }
}
