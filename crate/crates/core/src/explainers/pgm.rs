use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ExplainContext, Explanation, LocalGame, MaskType};
use crate::error::{Error, Result};
use crate::hetgraph::LocalViewSet;
use crate::rng::{self, Stream};
use crate::stats::chi2_2x2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgmParams {
    pub samples: usize,
    /// Probability that a candidate node is perturbed in a sample.
    pub perturb_probability: f64,
    /// Drop in predicted-class probability that counts as a changed outcome.
    pub prediction_drop: f64,
    /// Nodes with a larger chi-squared p-value get weight 0.
    pub significance: f64,
}

impl Default for PgmParams {
    fn default() -> Self {
        PgmParams {
            samples: 10,
            perturb_probability: 0.5,
            prediction_drop: 0.1,
            significance: 0.05,
        }
    }
}

/// Node weight from a 2x2 table of (node perturbed, outcome changed) counts.
pub(crate) fn pgm_weight(table: [[u64; 2]; 2], significance: f64) -> f64 {
    match chi2_2x2(table) {
        Some(p) if p <= significance => 1.0 - p,
        _ => 0.0,
    }
}

/// Perturbation-based explainer: within each view, zero random subsets of
/// non-target feature rows, flag samples whose predicted-class probability
/// drops, and score each node by a chi-squared test of dependence between
/// its perturbation and the flag.
pub fn pgm_explain(
    ctx: &ExplainContext<'_>,
    local: &LocalViewSet,
    params: &PgmParams,
    seed: u64,
) -> Result<Explanation> {
    if params.samples == 0 || !(0.0..=1.0).contains(&params.perturb_probability) {
        return Err(Error::Parameter(format!("PGM parameters {params:?}")));
    }
    let game = LocalGame::new(ctx, local)?;
    let base = game.probs()?[game.class];
    let mut rng = rng::stream(seed, Stream::Explainer, local.target as u64);
    let mut e = Explanation::zeros(
        "PGM",
        local,
        &ctx.model.view_names,
        MaskType::Node,
        game.class,
        seed,
    );
    for (m, view) in local.views.iter().enumerate() {
        let n = view.num_nodes();
        let mut perturbed = vec![vec![false; n]; params.samples];
        let mut flags = vec![false; params.samples];
        for (s, row) in perturbed.iter_mut().enumerate() {
            let mut x = view.features.clone();
            for (i, hit) in row.iter_mut().enumerate() {
                if i != view.target && rng.random::<f64>() < params.perturb_probability {
                    *hit = true;
                    x.row_mut(i).fill(0.0);
                }
            }
            let h = ctx
                .model
                .view_embedding(m, n, &view.edges, &x, view.target)?;
            let p = game.probs_with(m, h)?[game.class];
            flags[s] = base - p > params.prediction_drop;
        }
        for (i, score) in e.views[m].scores.iter_mut().enumerate() {
            if i == view.target {
                continue;
            }
            let mut table = [[0u64; 2]; 2];
            for (row, &flag) in perturbed.iter().zip(&flags) {
                table[usize::from(!row[i])][usize::from(!flag)] += 1;
            }
            *score = pgm_weight(table, params.significance);
        }
    }
    Ok(e)
}
