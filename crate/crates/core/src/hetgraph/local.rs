use serde::{Deserialize, Serialize};

use super::MetaPathView;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// k-hop ego subgraph of one view, reindexed compactly. `nodes[i]` is the
/// global index of local node `i`; nodes are sorted by global index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalView {
    pub nodes: Vec<usize>,
    /// Local undirected edges `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub features: Matrix,
    /// Local index of the explained node.
    pub target: usize,
}

impl LocalView {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }

    /// Local indices adjacent to the target, ascending.
    pub fn target_neighbors(&self) -> Vec<usize> {
        let t = self.target;
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == t {
                    Some(b)
                } else if b == t {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Per-view local computation graphs around one target node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalViewSet {
    /// Global index of the explained node.
    pub target: usize,
    pub views: Vec<LocalView>,
}

impl LocalViewSet {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// Checks that the target is present in every view and that index maps
    /// and edges are consistent.
    pub fn check(&self) -> Result<()> {
        for (m, view) in self.views.iter().enumerate() {
            if view.nodes.get(view.target) != Some(&self.target) {
                return Err(Error::Internal(format!(
                    "view {m}: target {} missing from local node set",
                    self.target
                )));
            }
            if view.features.rows() != view.nodes.len() {
                return Err(Error::Internal(format!(
                    "view {m}: {} feature rows for {} nodes",
                    view.features.rows(),
                    view.nodes.len()
                )));
            }
            if view
                .edges
                .iter()
                .any(|&(a, b)| a >= b || b >= view.nodes.len())
            {
                return Err(Error::Internal(format!("view {m}: malformed local edge")));
            }
        }
        Ok(())
    }
}

/// BFS to depth `k` from `v` inside each view independently, keeping the
/// induced edges among retained nodes.
pub fn extract_local_views(
    views: &[MetaPathView],
    features: &Matrix,
    v: usize,
    k: usize,
) -> Result<LocalViewSet> {
    if k == 0 {
        return Err(Error::Parameter("hop count must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(views.len());
    for view in views {
        let n = view.num_nodes();
        if v >= n || features.rows() != n {
            return Err(Error::Input(format!(
                "node {v} / {} feature rows incompatible with a {n}-node view",
                features.rows()
            )));
        }
        let mut depth = vec![usize::MAX; n];
        depth[v] = 0;
        let mut order = vec![v];
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            if depth[u] == k {
                continue;
            }
            for &w in view.neighbors(u) {
                if depth[w] == usize::MAX {
                    depth[w] = depth[u] + 1;
                    order.push(w);
                }
            }
        }
        order.sort_unstable();
        let nodes = order;
        let index = |g: usize| nodes.binary_search(&g).ok();
        let mut edges = Vec::new();
        for (a_local, &a) in nodes.iter().enumerate() {
            for &b in view.neighbors(a) {
                if b > a {
                    if let Some(b_local) = index(b) {
                        edges.push((a_local, b_local));
                    }
                }
            }
        }
        edges.sort_unstable();
        let target = index(v).expect("target retained");
        out.push(LocalView {
            features: features.gather_rows(&nodes),
            nodes,
            edges,
            target,
        });
    }
    Ok(LocalViewSet {
        target: v,
        views: out,
    })
}

#[cfg(test)]
mod tests {
    use super::super::MetaPath;
    use super::*;

    fn view(n: usize, edges: &[(usize, usize)]) -> MetaPathView {
        MetaPathView::from_edges("V", MetaPath::parse(&["r"]), n, edges.iter().copied()).unwrap()
    }

    #[test]
    fn isolated_target_gives_singletons() {
        let views = vec![view(4, &[(1, 2)]), view(4, &[(2, 3)])];
        let x = Matrix::zeros(4, 2);
        let set = extract_local_views(&views, &x, 0, 2).unwrap();
        for lv in &set.views {
            assert_eq!(lv.nodes, vec![0]);
            assert!(lv.edges.is_empty());
            assert_eq!(lv.target, 0);
        }
        set.check().unwrap();
    }

    #[test]
    fn path_graph_respects_depth() {
        // v=0 - a=1 - b=2 - c=3
        let views = vec![view(4, &[(0, 1), (1, 2), (2, 3)])];
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let set = extract_local_views(&views, &x, 0, 2).unwrap();
        let lv = &set.views[0];
        assert_eq!(lv.nodes, vec![0, 1, 2]);
        assert_eq!(lv.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(lv.features.data(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn views_are_indexed_independently() {
        let views = vec![view(5, &[(2, 4), (2, 3)]), view(5, &[(2, 0), (0, 4)])];
        let x = Matrix::zeros(5, 1);
        let set = extract_local_views(&views, &x, 2, 1).unwrap();
        assert_eq!(set.views[0].nodes, vec![2, 3, 4]);
        assert_eq!(set.views[1].nodes, vec![0, 2]);
        assert_eq!(set.views[0].local_index(2), Some(0));
        assert_eq!(set.views[1].local_index(2), Some(1));
        assert_eq!(set.views[1].target_neighbors(), vec![0]);
    }

    #[test]
    fn zero_hops_rejected() {
        let views = vec![view(2, &[(0, 1)])];
        assert!(extract_local_views(&views, &Matrix::zeros(2, 1), 0, 0).is_err());
    }
}
