//! Hard top-k masking and the fidelity protocol.
//!
//! A soft explanation is binarized per view by keeping the highest-scoring
//! fraction of its elements. The explained node itself is never a mask
//! candidate. Fidelity compares predictions on the explanation-only input
//! (sufficiency) and on the explanation-removed input (necessity) with the
//! prediction on the unmasked input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainers::{Explanation, MaskType};
use crate::hetgraph::{extract_local_views, LocalViewSet, TargetData};
use crate::metrics::{macro_f1, micro_f1, MeanStd};
use crate::predictors::{argmax, TrainedPredictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fraction of mask elements kept.
    pub sparsity: f64,
    /// Ego-graph radius used to extract local views.
    pub hops: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sparsity: 0.25,
            hops: 2,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::Parameter(format!(
                "sparsity {} outside (0, 1]",
                self.sparsity
            )));
        }
        if self.hops == 0 {
            return Err(Error::Parameter("hops must be at least 1".into()));
        }
        Ok(())
    }
}

/// Number of elements kept out of `n` at `sparsity`: `ceil(sparsity * n)`.
pub fn kept_count(n: usize, sparsity: f64) -> usize {
    // guard against products like 0.1 * 30 = 3.0000000000000004
    let k = (sparsity * n as f64 - 1e-9).ceil();
    (k.max(0.0) as usize).min(n)
}

/// Selects the `k` highest scores; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep = vec![false; scores.len()];
    for &i in order.iter().take(k) {
        keep[i] = true;
    }
    keep
}

/// Binary mask with the same supports as the explanation it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardMask {
    pub target: usize,
    pub mask_type: MaskType,
    pub views: Vec<Vec<bool>>,
    pub feature_mask: Option<Vec<bool>>,
}

impl HardMask {
    /// Selected elements per view (and feature dimensions, if any).
    pub fn selected_counts(&self) -> (Vec<usize>, Option<usize>) {
        (
            self.views
                .iter()
                .map(|v| v.iter().filter(|&&b| b).count())
                .collect(),
            self.feature_mask
                .as_ref()
                .map(|f| f.iter().filter(|&&b| b).count()),
        )
    }
}

/// Keeps `ceil(sparsity * n)` elements per scored container. For node masks
/// `n` counts the non-target nodes.
pub fn top_k_hard_mask(e: &Explanation, sparsity: f64) -> Result<HardMask> {
    e.check()?;
    let mut views = Vec::with_capacity(e.views.len());
    for v in &e.views {
        if e.mask_type.scores_edges() {
            views.push(top_k(&v.scores, kept_count(v.scores.len(), sparsity)));
        } else {
            let candidates: Vec<usize> = (0..v.scores.len()).filter(|&i| i != v.target).collect();
            let sub: Vec<f64> = candidates.iter().map(|&i| v.scores[i]).collect();
            let pick = top_k(&sub, kept_count(sub.len(), sparsity));
            let mut keep = vec![false; v.scores.len()];
            for (&i, &on) in candidates.iter().zip(&pick) {
                keep[i] = on;
            }
            views.push(keep);
        }
    }
    let feature_mask = e
        .feature_mask
        .as_ref()
        .map(|f| top_k(f, kept_count(f.len(), sparsity)));
    Ok(HardMask {
        target: e.target,
        mask_type: e.mask_type,
        views,
        feature_mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Retain only selected elements.
    KeepOnly,
    /// Delete selected elements.
    RemoveOnly,
}

/// Applies a hard mask to local views. Removing a node deletes its edges in
/// that view and zeroes its features there; the target is never removed.
pub fn apply_mask(local: &LocalViewSet, mask: &HardMask, mode: MaskMode) -> Result<LocalViewSet> {
    if mask.views.len() != local.num_views() {
        return Err(Error::dim(
            "apply_mask",
            format!("{} mask views for {} views", mask.views.len(), local.num_views()),
        ));
    }
    let drop = |selected: bool| match mode {
        MaskMode::KeepOnly => !selected,
        MaskMode::RemoveOnly => selected,
    };
    let mut out = local.clone();
    for (m, (view, sel)) in out.views.iter_mut().zip(&mask.views).enumerate() {
        let support = if mask.mask_type.scores_edges() {
            view.edges.len()
        } else {
            view.num_nodes()
        };
        if sel.len() != support {
            return Err(Error::dim(
                "apply_mask",
                format!("view {m}: mask of {} for support {support}", sel.len()),
            ));
        }
        if mask.mask_type.scores_edges() {
            let edges = std::mem::take(&mut view.edges);
            view.edges = edges
                .into_iter()
                .zip(sel)
                .filter(|(_, &s)| !drop(s))
                .map(|(e, _)| e)
                .collect();
        } else {
            let gone: Vec<bool> = sel
                .iter()
                .enumerate()
                .map(|(i, &s)| i != view.target && drop(s))
                .collect();
            view.edges.retain(|&(a, b)| !gone[a] && !gone[b]);
            for (i, &g) in gone.iter().enumerate() {
                if g {
                    view.features.row_mut(i).fill(0.0);
                }
            }
        }
    }
    if let Some(fm) = &mask.feature_mask {
        for (m, view) in out.views.iter_mut().enumerate() {
            if fm.len() != view.features.cols() {
                return Err(Error::dim(
                    "apply_mask",
                    format!("view {m}: feature mask of {} for {} dims", fm.len(), view.features.cols()),
                ));
            }
            for r in 0..view.num_nodes() {
                for (x, &s) in view.features.row_mut(r).iter_mut().zip(fm) {
                    if drop(s) {
                        *x = 0.0;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Predictions for one explained node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeOutcome {
    pub node: usize,
    pub original: usize,
    pub keep_only: usize,
    pub remove_only: usize,
}

/// Fidelity and F1 for one seed, as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub one_minus_fidelity_minus: f64,
    pub fidelity_plus: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// Evaluates one explanation: predictions on the unmasked, keep-only and
/// remove-only inputs with fusion weights fixed at `attention`.
pub fn evaluate_node(
    model: &TrainedPredictor,
    attention: &[f64],
    local: &LocalViewSet,
    explanation: &Explanation,
    sparsity: f64,
) -> Result<NodeOutcome> {
    if explanation.target != local.target {
        return Err(Error::Evaluation(format!(
            "explanation for node {} paired with node {}",
            explanation.target, local.target
        )));
    }
    for (m, (vs, lv)) in explanation.views.iter().zip(&local.views).enumerate() {
        if vs.nodes != lv.nodes || vs.edges != lv.edges {
            return Err(Error::dim(
                "evaluate",
                format!("node {}: view {m} support differs from the graph", local.target),
            ));
        }
    }
    let mask = top_k_hard_mask(explanation, sparsity)?;
    let predict = |l: &LocalViewSet| -> Result<usize> { Ok(argmax(&model.local_logits(l, attention)?)) };
    Ok(NodeOutcome {
        node: local.target,
        original: predict(local)?,
        keep_only: predict(&apply_mask(local, &mask, MaskMode::KeepOnly)?)?,
        remove_only: predict(&apply_mask(local, &mask, MaskMode::RemoveOnly)?)?,
    })
}

/// Aggregates per-node outcomes against ground-truth labels.
pub fn score_outcomes(outcomes: &[NodeOutcome], labels: &[usize], num_classes: usize) -> SeedScores {
    let n = outcomes.len().max(1) as f64;
    let kept = outcomes.iter().filter(|o| o.keep_only == o.original).count() as f64;
    let flipped = outcomes.iter().filter(|o| o.remove_only != o.original).count() as f64;
    let pred: Vec<usize> = outcomes.iter().map(|o| o.keep_only).collect();
    let truth: Vec<usize> = outcomes.iter().map(|o| labels[o.node]).collect();
    SeedScores {
        one_minus_fidelity_minus: 100.0 * kept / n,
        fidelity_plus: 100.0 * flipped / n,
        macro_f1: 100.0 * macro_f1(&pred, &truth, num_classes),
        micro_f1: 100.0 * micro_f1(&pred, &truth),
    }
}

/// Evaluates explanations of every test node for one seed.
pub fn evaluate(
    model: &TrainedPredictor,
    attention: &[f64],
    data: &TargetData,
    explanations: &[Explanation],
    config: &EvalConfig,
) -> Result<(SeedScores, Vec<NodeOutcome>)> {
    config.validate()?;
    let by_node: BTreeMap<usize, &Explanation> =
        explanations.iter().map(|e| (e.target, e)).collect();
    let missing: Vec<usize> = data
        .splits
        .test
        .iter()
        .copied()
        .filter(|v| !by_node.contains_key(v))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Evaluation(format!(
            "missing explanations for test nodes {missing:?}"
        )));
    }
    let mut outcomes = Vec::with_capacity(data.splits.test.len());
    for &v in &data.splits.test {
        let local = extract_local_views(&data.views, &data.features, v, config.hops)?;
        outcomes.push(evaluate_node(model, attention, &local, by_node[&v], config.sparsity)?);
    }
    Ok((
        score_outcomes(&outcomes, &data.labels, data.num_classes),
        outcomes,
    ))
}

/// One report row: mean and population std over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub dataset: String,
    pub predictor: String,
    pub backbone: String,
    pub model: String,
    pub mask_type: MaskType,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedScores>,
    pub one_minus_fidelity_minus: MeanStd,
    pub fidelity_plus: MeanStd,
    pub macro_f1: MeanStd,
    pub micro_f1: MeanStd,
}

impl FidelityReport {
    pub fn from_seeds(
        dataset: &str,
        backbone: crate::predictors::Backbone,
        model: &str,
        mask_type: MaskType,
        seeds: Vec<u64>,
        per_seed: Vec<SeedScores>,
    ) -> Self {
        let col = |f: fn(&SeedScores) -> f64| MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        FidelityReport {
            dataset: dataset.into(),
            predictor: "HAN".into(),
            backbone: match backbone {
                crate::predictors::Backbone::Han => "GAT".into(),
                crate::predictors::Backbone::HanGcn => "GCN".into(),
            },
            model: model.into(),
            mask_type,
            one_minus_fidelity_minus: col(|s| s.one_minus_fidelity_minus),
            fidelity_plus: col(|s| s.fidelity_plus),
            macro_f1: col(|s| s.macro_f1),
            micro_f1: col(|s| s.micro_f1),
            seeds,
            per_seed,
        }
    }

    /// Flat CSV record in table order.
    pub fn csv_row(&self) -> FidelityRow {
        FidelityRow {
            dataset: self.dataset.clone(),
            predictor: self.predictor.clone(),
            backbone: self.backbone.clone(),
            model: self.model.clone(),
            mask_type: self.mask_type.as_str().into(),
            one_minus_fid_minus_mean: self.one_minus_fidelity_minus.mean,
            one_minus_fid_minus_std: self.one_minus_fidelity_minus.std,
            fid_plus_mean: self.fidelity_plus.mean,
            fid_plus_std: self.fidelity_plus.std,
            macro_f1_mean: self.macro_f1.mean,
            macro_f1_std: self.macro_f1.std,
            micro_f1_mean: self.micro_f1.mean,
            micro_f1_std: self.micro_f1.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub dataset: String,
    pub predictor: String,
    pub backbone: String,
    pub model: String,
    pub mask_type: String,
    #[serde(rename = "1-fid-_mean")]
    pub one_minus_fid_minus_mean: f64,
    #[serde(rename = "1-fid-_std")]
    pub one_minus_fid_minus_std: f64,
    #[serde(rename = "fid+_mean")]
    pub fid_plus_mean: f64,
    #[serde(rename = "fid+_std")]
    pub fid_plus_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub micro_f1_mean: f64,
    pub micro_f1_std: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::ViewScores;
    use crate::hetgraph::LocalView;
    use crate::tensor::Matrix;

    #[test]
    fn tie_rule_and_cardinality() {
        let keep = top_k(&[0.9, 0.1, 0.5, 0.5], kept_count(4, 0.5));
        assert_eq!(keep, [true, false, true, false]);
        assert_eq!(kept_count(30, 0.1), 3);
        assert_eq!(kept_count(7, 0.25), 2);
        assert_eq!(kept_count(7, 1.0), 7);
        assert_eq!(kept_count(0, 0.25), 0);
    }

    fn path_local() -> LocalViewSet {
        // v(0) - a(1) - b(2)
        LocalViewSet {
            target: 10,
            views: vec![LocalView {
                nodes: vec![10, 11, 12],
                edges: vec![(0, 1), (1, 2)],
                features: Matrix::filled(3, 2, 1.0),
                target: 0,
            }],
        }
    }

    fn node_mask(sel: Vec<bool>) -> HardMask {
        HardMask {
            target: 10,
            mask_type: MaskType::Node,
            views: vec![sel],
            feature_mask: None,
        }
    }

    #[test]
    fn node_removal_isolates() {
        let local = path_local();
        let out = apply_mask(&local, &node_mask(vec![false, true, false]), MaskMode::RemoveOnly).unwrap();
        assert!(out.views[0].edges.is_empty());
        assert_eq!(out.views[0].features.row(1), [0.0, 0.0]);
        assert_eq!(out.views[0].features.row(2), [1.0, 1.0]);
        // empty mask removes nothing; full mask keeps everything
        let none = node_mask(vec![false; 3]);
        assert_eq!(apply_mask(&local, &none, MaskMode::RemoveOnly).unwrap(), local);
        let all = node_mask(vec![true; 3]);
        assert_eq!(apply_mask(&local, &all, MaskMode::KeepOnly).unwrap(), local);
        // the target survives even when unselected under keep-only
        let out = apply_mask(&local, &none, MaskMode::KeepOnly).unwrap();
        assert_eq!(out.views[0].features.row(0), [1.0, 1.0]);
        assert!(apply_mask(&local, &node_mask(vec![true; 2]), MaskMode::KeepOnly).is_err());
    }

    #[test]
    fn edge_and_feature_masks() {
        let local = path_local();
        let mask = HardMask {
            target: 10,
            mask_type: MaskType::EdgeFeature,
            views: vec![vec![true, false]],
            feature_mask: Some(vec![false, true]),
        };
        let keep = apply_mask(&local, &mask, MaskMode::KeepOnly).unwrap();
        assert_eq!(keep.views[0].edges, [(0, 1)]);
        assert_eq!(keep.views[0].features.row(2), [0.0, 1.0]);
        let removed = apply_mask(&local, &mask, MaskMode::RemoveOnly).unwrap();
        assert_eq!(removed.views[0].edges, [(1, 2)]);
        assert_eq!(removed.views[0].features.row(2), [1.0, 0.0]);
    }

    #[test]
    fn node_top_k_skips_target() {
        let e = Explanation {
            explainer: "Grad".into(),
            target: 10,
            mask_type: MaskType::Node,
            predicted_class: 0,
            seed: 0,
            views: vec![ViewScores {
                view: "V".into(),
                nodes: vec![10, 11, 12],
                edges: vec![(0, 1), (1, 2)],
                target: 0,
                scores: vec![5.0, 0.1, 0.2],
            }],
            feature_mask: None,
            solver: vec![],
            hyperparameters: serde_json::Value::Null,
        };
        let m = top_k_hard_mask(&e, 0.5).unwrap();
        assert_eq!(m.views[0], [false, false, true]);
    }

    #[test]
    fn scores_are_percentages() {
        let outcomes = [
            NodeOutcome {
                node: 0,
                original: 1,
                keep_only: 1,
                remove_only: 0,
            },
            NodeOutcome {
                node: 1,
                original: 0,
                keep_only: 1,
                remove_only: 0,
            },
        ];
        let s = score_outcomes(&outcomes, &[1, 0], 2);
        assert_eq!(s.one_minus_fidelity_minus, 50.0);
        assert_eq!(s.fidelity_plus, 50.0);
        assert_eq!(s.micro_f1, 50.0);
    }
}
