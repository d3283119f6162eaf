//! Meta-path contribution scores, attention/explanation alignment across
//! training runs, and the attention-intervention and retrain experiments.

mod experiments;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainers::{occlusion_channel_scores, Divergence, ExplainContext, Explanation};
use crate::hetgraph::LocalViewSet;
use crate::stats::{kendall_tau_b, spearman_rho, Correlation};

pub use experiments::{
    alignment_run, intervention_experiment, retrain_experiment, summarize_interventions,
    summarize_retrain, AlignmentRun, ConditionSummary, InterventionRecord, RetrainRecord,
    RetrainSummary,
};

/// Where per-view contribution scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ContributionSource {
    /// Sum of absolute Grad node scores per view.
    #[default]
    Grad,
    /// Change in output when the view alone is emptied.
    Occlusion { divergence: Divergence },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Raw scores summed to zero and the uniform fallback was used.
    pub degenerate: bool,
}

impl ContributionVector {
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|x| x.is_nan()) {
            return Err(Error::Input("NaN contribution score".into()));
        }
        if raw.iter().any(|&x| x < 0.0) {
            return Err(Error::Input("contribution scores must be nonnegative".into()));
        }
        let total: f64 = raw.iter().sum();
        let m = raw.len();
        let (normalized, degenerate) = if total > 0.0 {
            (raw.iter().map(|x| x / total).collect(), false)
        } else {
            (vec![1.0 / m as f64; m], true)
        };
        Ok(ContributionVector {
            raw,
            normalized,
            degenerate,
        })
    }
}

/// Per-view sums of absolute explanation scores, normalized to sum to one.
pub fn contribution_scores(e: &Explanation) -> Result<ContributionVector> {
    let raw = e
        .views
        .iter()
        .map(|v| {
            if v.scores.iter().any(|s| s.is_nan()) {
                return Err(Error::Input(format!("NaN score in view {}", v.view)));
            }
            Ok(v.scores.iter().map(|s| s.abs()).sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    ContributionVector::from_raw(raw)
}

/// Occlusion-based contribution vector of one node.
pub fn occlusion_contribution(
    ctx: &ExplainContext<'_>,
    local: &LocalViewSet,
    divergence: Divergence,
) -> Result<ContributionVector> {
    ContributionVector::from_raw(occlusion_channel_scores(ctx, local, divergence)?)
}

/// Dataset-level contribution: the mean of per-node normalized vectors.
pub fn global_contribution(nodes: &[ContributionVector]) -> Result<Vec<f64>> {
    let first = nodes
        .first()
        .ok_or_else(|| Error::Input("no contribution vectors to aggregate".into()))?;
    let m = first.normalized.len();
    let mut out = vec![0.0; m];
    for c in nodes {
        if c.normalized.len() != m {
            return Err(Error::dim(
                "global_contribution",
                format!("vectors of length {} and {m}", c.normalized.len()),
            ));
        }
        for (o, x) in out.iter_mut().zip(&c.normalized) {
            *o += x;
        }
    }
    for o in out.iter_mut() {
        *o /= nodes.len() as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAlignment {
    pub view: String,
    pub kendall: Correlation,
    pub spearman: Correlation,
}

/// Rank agreement between attention and contribution across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub runs: usize,
    pub channels: Vec<ChannelAlignment>,
    /// With two views the channels mirror each other; this is channel 0.
    pub summary: Option<ChannelAlignment>,
}

/// Correlates `attention[r][m]` with `contribution[r][m]` over runs `r`,
/// separately for each view `m`.
pub fn mp_aea(
    view_names: &[String],
    attention: &[Vec<f64>],
    contribution: &[Vec<f64>],
) -> Result<AlignmentReport> {
    let r = attention.len();
    if r != contribution.len() {
        return Err(Error::dim(
            "mp_aea",
            format!("{r} attention vectors, {} contribution vectors", contribution.len()),
        ));
    }
    if r < 3 {
        return Err(Error::Input(format!("alignment needs at least 3 runs, got {r}")));
    }
    let m = view_names.len();
    if attention.iter().chain(contribution).any(|v| v.len() != m) {
        return Err(Error::dim("mp_aea", format!("vectors must have length {m}")));
    }
    let mut channels = Vec::with_capacity(m);
    for (k, name) in view_names.iter().enumerate() {
        let a: Vec<f64> = attention.iter().map(|v| v[k]).collect();
        let s: Vec<f64> = contribution.iter().map(|v| v[k]).collect();
        channels.push(ChannelAlignment {
            view: name.clone(),
            kendall: kendall_tau_b(&a, &s)?,
            spearman: spearman_rho(&a, &s)?,
        });
    }
    let summary = (m == 2).then(|| channels[0].clone());
    Ok(AlignmentReport {
        runs: r,
        channels,
        summary,
    })
}
