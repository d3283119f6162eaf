use serde::{Deserialize, Serialize};

use super::{contribution_scores, global_contribution, occlusion_contribution, ContributionSource};
use crate::error::{Error, Result};
use crate::explainers::{grad_explain, ExplainContext};
use crate::hetgraph::{extract_local_views, TargetData};
use crate::metrics::{macro_f1, micro_f1, MeanStd};
use crate::predictors::{train, AttentionOverride, PredictorConfig, TrainedPredictor};

fn test_scores(model: &TrainedPredictor, data: &TargetData, over: &AttentionOverride) -> Result<(f64, f64)> {
    let pred = model.infer(&data.views, &data.features, over)?.predictions();
    let p: Vec<usize> = data.splits.test.iter().map(|&i| pred[i]).collect();
    let t: Vec<usize> = data.splits.test.iter().map(|&i| data.labels[i]).collect();
    Ok((
        100.0 * macro_f1(&p, &t, data.num_classes),
        100.0 * micro_f1(&p, &t),
    ))
}

fn with_seed(config: &PredictorConfig, seed: u64) -> PredictorConfig {
    PredictorConfig {
        seed,
        ..config.clone()
    }
}

/// Attention and dataset-level contribution of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRun {
    pub seed: u64,
    pub attention: Vec<f64>,
    pub contribution: Vec<f64>,
    /// Test nodes whose raw scores summed to zero.
    pub degenerate_nodes: usize,
    pub test_macro_f1: f64,
}

/// Trains with `seed` and measures the learned attention together with the
/// mean per-node contribution over the test split.
pub fn alignment_run(
    data: &TargetData,
    config: &PredictorConfig,
    seed: u64,
    source: ContributionSource,
    hops: usize,
) -> Result<AlignmentRun> {
    let model = train(data, &with_seed(config, seed))?;
    let ctx = ExplainContext::new(&model, data, &AttentionOverride::Learned)?;
    let mut per_node = Vec::with_capacity(data.splits.test.len());
    for &v in &data.splits.test {
        let local = extract_local_views(&data.views, &data.features, v, hops)?;
        per_node.push(match source {
            ContributionSource::Grad => contribution_scores(&grad_explain(&ctx, &local)?)?,
            ContributionSource::Occlusion { divergence } => {
                occlusion_contribution(&ctx, &local, divergence)?
            }
        });
    }
    let (f1, _) = test_scores(&model, data, &AttentionOverride::Learned)?;
    Ok(AlignmentRun {
        seed,
        attention: ctx.attention.clone(),
        contribution: global_contribution(&per_node)?,
        degenerate_nodes: per_node.iter().filter(|c| c.degenerate).count(),
        test_macro_f1: f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub condition: String,
    pub seed: u64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub macro_f1: MeanStd,
    pub micro_f1: MeanStd,
}

/// Trains once per seed and scores the test split under each fusion override.
pub fn intervention_experiment(
    data: &TargetData,
    config: &PredictorConfig,
    seeds: &[u64],
    conditions: &[AttentionOverride],
) -> Result<Vec<InterventionRecord>> {
    let mut out = Vec::with_capacity(seeds.len() * conditions.len());
    for &seed in seeds {
        let model = train(data, &with_seed(config, seed))?;
        for cond in conditions {
            let (ma, mi) = test_scores(&model, data, cond)?;
            out.push(InterventionRecord {
                condition: cond.label(),
                seed,
                macro_f1: ma,
                micro_f1: mi,
            });
        }
    }
    Ok(out)
}

/// Mean and std per condition, in first-seen order.
pub fn summarize_interventions(records: &[InterventionRecord]) -> Vec<ConditionSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.condition.as_str()) {
            order.push(&r.condition);
        }
    }
    order
        .into_iter()
        .map(|c| {
            let rows: Vec<&InterventionRecord> = records.iter().filter(|r| r.condition == c).collect();
            ConditionSummary {
                condition: c.into(),
                macro_f1: MeanStd::of(&rows.iter().map(|r| r.macro_f1).collect::<Vec<_>>()),
                micro_f1: MeanStd::of(&rows.iter().map(|r| r.micro_f1).collect::<Vec<_>>()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainRecord {
    /// Fraction of unlabelled target nodes removed.
    pub level: f64,
    pub seed: u64,
    pub removed: usize,
    pub original_macro_f1: f64,
    pub original_micro_f1: f64,
    pub masked_macro_f1: f64,
    pub masked_micro_f1: f64,
    pub retrained_macro_f1: f64,
    pub retrained_micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainSummary {
    pub level: f64,
    pub original: MeanStd,
    pub after_masking: MeanStd,
    pub after_retrain: MeanStd,
}

/// Grad importance of every target-type node: scores summed over the
/// explanations of all labelled nodes and over views.
fn grad_importance(ctx: &ExplainContext<'_>, data: &TargetData, hops: usize) -> Result<Vec<f64>> {
    let mut importance = vec![0.0; data.num_nodes()];
    let s = &data.splits;
    let mut labelled: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    labelled.sort_unstable();
    labelled.dedup();
    for v in labelled {
        let local = extract_local_views(&data.views, &data.features, v, hops)?;
        let e = grad_explain(ctx, &local)?;
        for view in &e.views {
            for (&g, &x) in view.nodes.iter().zip(&view.scores) {
                importance[g] += x;
            }
        }
    }
    Ok(importance)
}

/// Removes the least important unlabelled target nodes at each level, then
/// scores the original model on the reduced graph and a model retrained on
/// it with identical hyperparameters.
pub fn retrain_experiment(
    data: &TargetData,
    config: &PredictorConfig,
    seeds: &[u64],
    levels: &[f64],
    hops: usize,
) -> Result<Vec<RetrainRecord>> {
    if let Some(l) = levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Parameter(format!("removal fraction {l} outside [0, 1]")));
    }
    let s = &data.splits;
    let mut protected = vec![false; data.num_nodes()];
    for &i in s.train.iter().chain(&s.val).chain(&s.test) {
        protected[i] = true;
    }
    let pool: Vec<usize> = (0..data.num_nodes()).filter(|&i| !protected[i]).collect();
    let mut out = Vec::new();
    for &seed in seeds {
        let cfg = with_seed(config, seed);
        let model = train(data, &cfg)?;
        let (orig_ma, orig_mi) = test_scores(&model, data, &AttentionOverride::Learned)?;
        let ctx = ExplainContext::new(&model, data, &AttentionOverride::Learned)?;
        let importance = grad_importance(&ctx, data, hops)?;
        let mut ranked = pool.clone();
        ranked.sort_by(|&a, &b| importance[a].total_cmp(&importance[b]).then(a.cmp(&b)));
        for &level in levels {
            let removed = (level * pool.len() as f64).round() as usize;
            let mut keep: Vec<usize> = (0..data.num_nodes())
                .filter(|&i| protected[i])
                .chain(ranked[removed..].iter().copied())
                .collect();
            keep.sort_unstable();
            let reduced = data.induced(&keep)?;
            let connected = reduced
                .splits
                .train
                .iter()
                .any(|&i| reduced.views.iter().any(|v| v.degree(i) > 0));
            if !connected && data.splits.train.iter().any(|&i| data.views.iter().any(|v| v.degree(i) > 0)) {
                return Err(Error::Protocol(format!(
                    "removing {removed} nodes disconnects every training node"
                )));
            }
            let (masked_ma, masked_mi) = test_scores(&model, &reduced, &AttentionOverride::Learned)?;
            let retrained = train(&reduced, &cfg)?;
            let (re_ma, re_mi) = test_scores(&retrained, &reduced, &AttentionOverride::Learned)?;
            out.push(RetrainRecord {
                level,
                seed,
                removed,
                original_macro_f1: orig_ma,
                original_micro_f1: orig_mi,
                masked_macro_f1: masked_ma,
                masked_micro_f1: masked_mi,
                retrained_macro_f1: re_ma,
                retrained_micro_f1: re_mi,
            });
        }
    }
    Ok(out)
}

/// Macro-F1 mean and std per level, in first-seen order.
pub fn summarize_retrain(records: &[RetrainRecord]) -> Vec<RetrainSummary> {
    let mut levels: Vec<f64> = Vec::new();
    for r in records {
        if !levels.contains(&r.level) {
            levels.push(r.level);
        }
    }
    levels
        .into_iter()
        .map(|level| {
            let rows: Vec<&RetrainRecord> = records.iter().filter(|r| r.level == level).collect();
            let col = |f: fn(&RetrainRecord) -> f64| MeanStd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            RetrainSummary {
                level,
                original: col(|r| r.original_macro_f1),
                after_masking: col(|r| r.masked_macro_f1),
                after_retrain: col(|r| r.retrained_macro_f1),
            }
        })
        .collect()
}
