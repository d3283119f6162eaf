use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{HeteroGraph, Schema, Splits};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One relation traversal; `reverse` walks the relation from target to source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub relation: String,
    pub reverse: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPath {
    pub steps: Vec<Step>,
}

impl MetaPath {
    /// Parses relation names, a leading `~` marking a reversed step.
    pub fn parse<S: AsRef<str>>(steps: &[S]) -> Self {
        MetaPath {
            steps: steps
                .iter()
                .map(|s| {
                    let s = s.as_ref();
                    match s.strip_prefix('~') {
                        Some(rest) => Step {
                            relation: rest.to_string(),
                            reverse: true,
                        },
                        None => Step {
                            relation: s.to_string(),
                            reverse: false,
                        },
                    }
                })
                .collect(),
        }
    }

    /// Relation names with `~` for reversed steps (inverse of [`parse`](Self::parse)).
    pub fn to_strings(&self) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| {
                if s.reverse {
                    format!("~{}", s.relation)
                } else {
                    s.relation.clone()
                }
            })
            .collect()
    }

    /// Resolves steps to `(relation index, reverse)` and checks that they
    /// compose and start and end at `target_type`.
    pub fn resolve(&self, schema: &Schema, target_type: &str) -> Result<Vec<(usize, bool)>> {
        if self.steps.is_empty() {
            return Err(Error::Schema("meta-path has no steps".into()));
        }
        let mut current = target_type;
        let mut out = Vec::with_capacity(self.steps.len());
        for (i, step) in self.steps.iter().enumerate() {
            let r = schema.relation(&step.relation).ok_or_else(|| {
                Error::Schema(format!("step {i}: unknown relation {:?}", step.relation))
            })?;
            let rel = &schema.relations[r];
            let (from, to) = if step.reverse {
                (&rel.target, &rel.source)
            } else {
                (&rel.source, &rel.target)
            };
            if from != current {
                return Err(Error::Schema(format!(
                    "step {i} ({}{}) starts at {from:?} but the previous step ends at {current:?}",
                    if step.reverse { "~" } else { "" },
                    step.relation
                )));
            }
            current = to;
            out.push((r, step.reverse));
        }
        if current != target_type {
            return Err(Error::Schema(format!(
                "meta-path ends at {current:?}, expected target type {target_type:?}"
            )));
        }
        Ok(out)
    }

    /// Short display name built from node-type initials, e.g. `PAP`.
    pub fn display_name(&self, schema: &Schema) -> String {
        let initial = |t: &str| t.chars().next().map(|c| c.to_ascii_uppercase()).unwrap_or('?');
        let mut name = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            let Some(r) = schema.relation(&step.relation) else {
                return self.to_strings().join(",");
            };
            let rel = &schema.relations[r];
            let (from, to) = if step.reverse {
                (&rel.target, &rel.source)
            } else {
                (&rel.source, &rel.target)
            };
            if i == 0 {
                name.push(initial(from));
            }
            name.push(initial(to));
        }
        name
    }
}

/// Homogeneous graph over target-type nodes. Edges are undirected pairs
/// `(u, v)` with `u < v`, sorted and deduplicated; self pairs are excluded
/// (predictors add self loops at aggregation time).
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPathView {
    pub name: String,
    pub meta_path: MetaPath,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl MetaPathView {
    /// Builds a view from arbitrary pairs: symmetrizes, drops self pairs,
    /// sorts and deduplicates.
    pub fn from_edges(
        name: impl Into<String>,
        meta_path: MetaPath,
        num_nodes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "view edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut degree = vec![0usize; num_nodes + 1];
        for &(a, b) in &edges {
            degree[a + 1] += 1;
            degree[b + 1] += 1;
        }
        let mut offsets = degree;
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0; 2 * edges.len()];
        for &(a, b) in &edges {
            neighbors[fill[a]] = b;
            fill[a] += 1;
            neighbors[fill[b]] = a;
            fill[b] += 1;
        }
        for i in 0..num_nodes {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Ok(MetaPathView {
            name: name.into(),
            meta_path,
            num_nodes,
            edges,
            offsets,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// View restricted to `keep` (sorted, distinct old indices), reindexed so
    /// that old node `keep[i]` becomes `i`.
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        let mut new_index = vec![usize::MAX; self.num_nodes];
        for (i, &old) in keep.iter().enumerate() {
            if old >= self.num_nodes {
                return Err(Error::Input(format!("node {old} out of range")));
            }
            new_index[old] = i;
        }
        let pairs = self.edges.iter().filter_map(|&(a, b)| {
            let (x, y) = (new_index[a], new_index[b]);
            (x != usize::MAX && y != usize::MAX).then_some((x, y))
        });
        MetaPathView::from_edges(self.name.clone(), self.meta_path.clone(), keep.len(), pairs)
    }
}

/// Compressed adjacency of one relation in the traversal direction.
struct Hop {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Hop {
    fn new(n_from: usize, pairs: &[(usize, usize)], reverse: bool) -> Self {
        let mut offsets = vec![0usize; n_from + 1];
        for &(a, b) in pairs {
            let from = if reverse { b } else { a };
            offsets[from + 1] += 1;
        }
        for i in 0..n_from {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0; pairs.len()];
        for &(a, b) in pairs {
            let (from, to) = if reverse { (b, a) } else { (a, b) };
            targets[fill[from]] = to;
            fill[from] += 1;
        }
        Hop { offsets, targets }
    }

    fn from(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }
}

/// Induces the binary meta-path view: `u` and `w` are adjacent iff some
/// instance path following the relation sequence joins them.
pub fn induce_view(graph: &HeteroGraph, meta_path: &MetaPath) -> Result<MetaPathView> {
    let schema = &graph.schema;
    let target_name = &schema.node_types[graph.target_type];
    let resolved = meta_path.resolve(schema, target_name)?;

    let mut hops = Vec::with_capacity(resolved.len());
    let mut sizes = Vec::with_capacity(resolved.len() + 1);
    for &(r, reverse) in &resolved {
        let rel = &schema.relations[r];
        let count = |t: &str| schema.node_type(t).map(|i| graph.node_counts[i]).unwrap_or(0);
        let (n_src, n_dst) = (count(&rel.source), count(&rel.target));
        if let Some(&(a, b)) = graph.edges[r].iter().find(|&&(a, b)| a >= n_src || b >= n_dst) {
            return Err(Error::InvalidGraph(format!(
                "relation {} has out-of-range edge ({a}, {b})",
                rel.name
            )));
        }
        let (n_from, n_to) = if reverse { (n_dst, n_src) } else { (n_src, n_dst) };
        hops.push(Hop::new(n_from, &graph.edges[r], reverse));
        sizes.push(n_to);
    }

    let n = graph.target_count();
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    let mut stamp = vec![usize::MAX; max_size];
    let mut pairs = Vec::new();
    let mut frontier = Vec::new();
    let mut next = Vec::new();
    let mut round = 0usize;
    for u in 0..n {
        frontier.clear();
        frontier.push(u);
        for hop in &hops {
            round += 1;
            next.clear();
            for &x in &frontier {
                for &y in hop.from(x) {
                    if stamp[y] != round {
                        stamp[y] = round;
                        next.push(y);
                    }
                }
            }
            std::mem::swap(&mut frontier, &mut next);
        }
        pairs.extend(frontier.iter().filter(|&&w| w != u).map(|&w| (u, w)));
    }
    let name = meta_path.display_name(schema);
    MetaPathView::from_edges(name, meta_path.clone(), n, pairs)
}

/// Everything a predictor trains on: the target-type feature matrix, views,
/// labels and splits.
#[derive(Debug, Clone)]
pub struct TargetData {
    pub views: Vec<MetaPathView>,
    pub features: Arc<Matrix>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl TargetData {
    pub fn from_graph(graph: &HeteroGraph, meta_paths: &[MetaPath]) -> Result<Self> {
        let violations = graph.validate();
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::InvalidGraph(list.join("; ")));
        }
        if meta_paths.is_empty() {
            return Err(Error::Schema("at least one meta-path is required".into()));
        }
        let views = meta_paths
            .iter()
            .map(|m| induce_view(graph, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(TargetData {
            views,
            features: Arc::new(graph.target_features().clone()),
            labels: graph.labels.clone(),
            num_classes: graph.num_classes,
            splits: graph.splits.clone(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// Restricts every view, the features, labels and splits to `keep`
    /// (sorted, distinct). Split members that do not survive are dropped.
    pub fn induced(&self, keep: &[usize]) -> Result<TargetData> {
        if keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("kept node list must be sorted and distinct".into()));
        }
        let n = self.num_nodes();
        let mut new_index = vec![usize::MAX; n];
        for (i, &old) in keep.iter().enumerate() {
            if old >= n {
                return Err(Error::Input(format!("node {old} out of range")));
            }
            new_index[old] = i;
        }
        let remap = |set: &[usize]| -> Vec<usize> {
            set.iter()
                .filter_map(|&o| (new_index[o] != usize::MAX).then_some(new_index[o]))
                .collect()
        };
        Ok(TargetData {
            views: self
                .views
                .iter()
                .map(|v| v.induced(keep))
                .collect::<Result<_>>()?,
            features: Arc::new(self.features.gather_rows(keep)),
            labels: keep.iter().map(|&o| self.labels[o]).collect(),
            num_classes: self.num_classes,
            splits: Splits {
                train: remap(&self.splits.train),
                val: remap(&self.splits.val),
                test: remap(&self.splits.test),
            },
        })
    }
}
