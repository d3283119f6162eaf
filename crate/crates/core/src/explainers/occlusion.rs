use serde::{Deserialize, Serialize};

use super::{ExplainContext, LocalGame};
use crate::error::Result;
use crate::hetgraph::LocalViewSet;
use crate::predictors::probabilities;

/// Distance between the full and the occluded prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    /// Total variation between class distributions.
    #[default]
    TotalVariation,
    /// Euclidean distance between logit vectors.
    L2Logits,
}

impl Divergence {
    fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Divergence::TotalVariation => {
                let (pa, pb) = (probabilities(a), probabilities(b));
                0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>()
            }
            Divergence::L2Logits => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Per-view change in the target's output when that view alone is replaced
/// by its null view (all edges removed, nodes kept).
pub fn occlusion_channel_scores(
    ctx: &ExplainContext<'_>,
    local: &LocalViewSet,
    divergence: Divergence,
) -> Result<Vec<f64>> {
    let game = LocalGame::new(ctx, local)?;
    let full = ctx.model.decode(&game.embeddings, &ctx.attention)?;
    let mut out = Vec::with_capacity(local.num_views());
    for (m, view) in local.views.iter().enumerate() {
        let isolated = ctx
            .model
            .view_embedding(m, view.num_nodes(), &[], &view.features, view.target)?;
        let mut embeddings = game.embeddings.clone();
        embeddings[m] = isolated;
        let occluded = ctx.model.decode(&embeddings, &ctx.attention)?;
        out.push(divergence.between(&full, &occluded));
    }
    Ok(out)
}
