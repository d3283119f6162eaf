use serde::{Deserialize, Serialize};

use super::shapley::{solve_game, GameSettings, Sampling};
use super::{ExplainContext, Explanation, LocalGame, MaskType};
use crate::error::Result;
use crate::hetgraph::LocalViewSet;
use crate::rng::{self, Stream};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnShapParams {
    pub samples: usize,
    pub ridge: f64,
    /// Views with more edges than this fit the surrogate by mini-batch descent.
    pub direct_solve_limit: usize,
    pub descent_passes: usize,
}

impl Default for GnnShapParams {
    fn default() -> Self {
        GnnShapParams {
            samples: 15_000,
            ridge: 1e-3,
            direct_solve_limit: 1000,
            descent_passes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphSvxParams {
    pub samples: usize,
    /// Coalition sizes enumerated (with complements) before sampling.
    pub max_enumerated_size: usize,
    pub ridge: f64,
    /// Report each edge as the sum of its endpoints' node scores.
    pub lift_to_edges: bool,
}

impl Default for GraphSvxParams {
    fn default() -> Self {
        GraphSvxParams {
            samples: 1000,
            max_enumerated_size: 3,
            ridge: 1e-3,
            lift_to_edges: true,
        }
    }
}

/// Edge-level Shapley attributions per view. Players are the view's local
/// edges; a coalition keeps its edges in that view only, and the payoff is
/// the predicted-class probability.
pub fn gnnshap_explain(
    ctx: &ExplainContext<'_>,
    local: &LocalViewSet,
    params: &GnnShapParams,
    seed: u64,
) -> Result<Explanation> {
    let game = LocalGame::new(ctx, local)?;
    let settings = GameSettings {
        budget: params.samples,
        ridge: params.ridge,
        sampling: Sampling::KernelShap,
        direct_solve_limit: params.direct_solve_limit,
        descent_passes: params.descent_passes,
        descent_batch: 256,
    };
    let mut rng = rng::stream(seed, Stream::Explainer, local.target as u64);
    let mut e = Explanation::zeros(
        "GNNShap",
        local,
        &ctx.model.view_names,
        MaskType::Edge,
        game.class,
        seed,
    );
    for (m, view) in local.views.iter().enumerate() {
        let p = view.edges.len();
        if p <= 1 {
            continue;
        }
        let projected = ctx.model.project_features(m, &view.features)?;
        let mut kept = Vec::with_capacity(p);
        let mut value = |z: &[bool]| -> Result<f64> {
            kept.clear();
            kept.extend(view.edges.iter().zip(z).filter(|(_, &on)| on).map(|(e, _)| *e));
            let h = ctx
                .model
                .view_embedding_projected(m, &kept, &projected, view.target)?;
            Ok(game.probs_with(m, h)?[game.class])
        };
        let (phi, mut info) = solve_game(p, &mut value, &settings, &mut rng)?;
        info.view = m;
        e.views[m].scores = phi;
        e.solver.push(info);
    }
    Ok(e)
}

/// Node-level Shapley attributions per view. Players are the target's
/// neighbours; an absent player's features are replaced by the training
/// mean. Scores are optionally lifted to edges.
pub fn graphsvx_explain(
    ctx: &ExplainContext<'_>,
    local: &LocalViewSet,
    params: &GraphSvxParams,
    seed: u64,
) -> Result<Explanation> {
    let game = LocalGame::new(ctx, local)?;
    let settings = GameSettings {
        budget: params.samples,
        ridge: params.ridge,
        sampling: Sampling::SizeStratified {
            max_size: params.max_enumerated_size,
        },
        direct_solve_limit: usize::MAX,
        descent_passes: 0,
        descent_batch: 1,
    };
    let mask_type = if params.lift_to_edges {
        MaskType::Edge
    } else {
        MaskType::Node
    };
    let mut rng = rng::stream(seed, Stream::Explainer, local.target as u64);
    let mut e = Explanation::zeros(
        "GraphSVX",
        local,
        &ctx.model.view_names,
        mask_type,
        game.class,
        seed,
    );
    let mean = Matrix::from_vec(1, ctx.feature_mean.len(), ctx.feature_mean.clone())?;
    for (m, view) in local.views.iter().enumerate() {
        let players = view.target_neighbors();
        if players.len() < 2 {
            continue;
        }
        let projected = ctx.model.project_features(m, &view.features)?;
        let projected_mean = ctx.model.project_features(m, &mean)?;
        let mut slot = vec![None; view.num_nodes()];
        for (j, &u) in players.iter().enumerate() {
            slot[u] = Some(j);
        }
        let mut value = |z: &[bool]| -> Result<f64> {
            let h = ctx.model.embed_with(m, &view.edges, view.target, &|u| match slot[u] {
                Some(j) if !z[j] => projected_mean.row(0).to_vec(),
                _ => projected.row(u).to_vec(),
            });
            Ok(game.probs_with(m, h)?[game.class])
        };
        let (phi, mut info) = solve_game(players.len(), &mut value, &settings, &mut rng)?;
        info.view = m;
        e.solver.push(info);
        let mut node_scores = vec![0.0; view.num_nodes()];
        for (&u, s) in players.iter().zip(phi) {
            node_scores[u] = s;
        }
        e.views[m].scores = if params.lift_to_edges {
            view.edges
                .iter()
                .map(|&(a, b)| node_scores[a] + node_scores[b])
                .collect()
        } else {
            node_scores
        };
    }
    Ok(e)
}
