//! View-factorized post-hoc explainers.
//!
//! Every explanation keeps one score container per meta-path view, defined
//! on that view's local ego graph. Perturbations made while explaining view
//! `m` only touch view `m`; the other views' target embeddings are computed
//! once and reused. Fusion weights are fixed at the value the model uses on
//! the full graph, so local logits reproduce the full-graph prediction.

mod gnnexplainer;
mod grad;
mod occlusion;
mod pgm;
mod random;
pub mod shapley;
mod shap_explainers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{LocalViewSet, TargetData};
use crate::predictors::{argmax, probabilities, AttentionOverride, TrainedPredictor};

pub use gnnexplainer::{gnnexplainer_explain, GnnExplainerParams};
pub use grad::grad_explain;
pub use occlusion::{occlusion_channel_scores, Divergence};
pub use pgm::{pgm_explain, PgmParams};
pub use random::random_baseline;
pub use shap_explainers::{gnnshap_explain, graphsvx_explain, GnnShapParams, GraphSvxParams};
pub use shapley::SolveInfo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskType {
    Node,
    Edge,
    EdgeFeature,
}

impl MaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskType::Node => "node",
            MaskType::Edge => "edge",
            MaskType::EdgeFeature => "edge_feature",
        }
    }

    /// Whether per-view scores live on edges rather than nodes.
    pub fn scores_edges(self) -> bool {
        !matches!(self, MaskType::Node)
    }
}

/// Scores for one view. `nodes` maps local to global indices; `edges` are
/// local pairs. `scores` runs over nodes for node masks, else over edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewScores {
    pub view: String,
    pub nodes: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub target: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub explainer: String,
    pub target: usize,
    pub mask_type: MaskType,
    pub predicted_class: usize,
    pub seed: u64,
    pub views: Vec<ViewScores>,
    /// Shared mask over feature dimensions (edge+feature explanations).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_mask: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub solver: Vec<SolveInfo>,
    pub hyperparameters: serde_json::Value,
}

impl Explanation {
    /// An explanation shell over `local` with all-zero scores.
    pub(crate) fn zeros(
        explainer: &str,
        local: &LocalViewSet,
        names: &[String],
        mask_type: MaskType,
        predicted_class: usize,
        seed: u64,
    ) -> Explanation {
        let views = local
            .views
            .iter()
            .zip(names)
            .map(|(v, name)| ViewScores {
                view: name.clone(),
                nodes: v.nodes.clone(),
                edges: v.edges.clone(),
                target: v.target,
                scores: vec![
                    0.0;
                    if mask_type.scores_edges() {
                        v.edges.len()
                    } else {
                        v.num_nodes()
                    }
                ],
            })
            .collect();
        Explanation {
            explainer: explainer.into(),
            target: local.target,
            mask_type,
            predicted_class,
            seed,
            views,
            feature_mask: None,
            solver: Vec::new(),
            hyperparameters: serde_json::Value::Null,
        }
    }

    /// Checks that every score container matches its view's support.
    pub fn check(&self) -> Result<()> {
        for (m, v) in self.views.iter().enumerate() {
            let want = if self.mask_type.scores_edges() {
                v.edges.len()
            } else {
                v.nodes.len()
            };
            if v.scores.len() != want {
                return Err(Error::dim(
                    "explanation",
                    format!("view {m}: {} scores for support {want}", v.scores.len()),
                ));
            }
            if v.scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::Input(format!("view {m}: non-finite score")));
            }
        }
        if self.feature_mask.is_some() != (self.mask_type == MaskType::EdgeFeature) {
            return Err(Error::Input(format!(
                "feature mask presence does not match mask type {}",
                self.mask_type.as_str()
            )));
        }
        Ok(())
    }
}

/// Shared inputs for explaining nodes of one trained model on one graph.
#[derive(Debug, Clone)]
pub struct ExplainContext<'a> {
    pub model: &'a TrainedPredictor,
    /// Fusion weights used on the full graph.
    pub attention: Vec<f64>,
    /// Full-graph predicted class of every target-type node.
    pub predictions: Vec<usize>,
    /// Training-split feature mean, used to mask features by expectation.
    pub feature_mean: Vec<f64>,
}

impl<'a> ExplainContext<'a> {
    pub fn new(
        model: &'a TrainedPredictor,
        data: &TargetData,
        attention: &AttentionOverride,
    ) -> Result<Self> {
        let inference = model.infer(&data.views, &data.features, attention)?;
        let d = data.features.cols();
        let mut feature_mean = vec![0.0; d];
        let train = &data.splits.train;
        for &i in train {
            for (acc, x) in feature_mean.iter_mut().zip(data.features.row(i)) {
                *acc += x;
            }
        }
        if !train.is_empty() {
            for x in feature_mean.iter_mut() {
                *x /= train.len() as f64;
            }
        }
        Ok(ExplainContext {
            model,
            attention: inference.attention.clone(),
            predictions: inference.predictions(),
            feature_mean,
        })
    }
}

/// Cached per-view target embeddings of one local view set, for evaluating
/// single-view perturbations.
pub(crate) struct LocalGame<'c, 'a> {
    pub ctx: &'c ExplainContext<'a>,
    pub embeddings: Vec<Vec<f64>>,
    pub class: usize,
}

impl<'c, 'a> LocalGame<'c, 'a> {
    pub fn new(ctx: &'c ExplainContext<'a>, local: &LocalViewSet) -> Result<Self> {
        local.check()?;
        let embeddings = ctx.model.local_embeddings(local)?;
        let logits = ctx.model.decode(&embeddings, &ctx.attention)?;
        Ok(LocalGame {
            ctx,
            embeddings,
            class: argmax(&logits),
        })
    }

    /// Class probabilities with view `m`'s embedding replaced.
    pub fn probs_with(&self, m: usize, embedding: Vec<f64>) -> Result<Vec<f64>> {
        let mut all = self.embeddings.clone();
        all[m] = embedding;
        Ok(probabilities(&self.ctx.model.decode(&all, &self.ctx.attention)?))
    }

    pub fn probs(&self) -> Result<Vec<f64>> {
        Ok(probabilities(
            &self.ctx.model.decode(&self.embeddings, &self.ctx.attention)?,
        ))
    }
}

/// Explainer selection with hyperparameters; the JSON tag is `name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum ExplainerConfig {
    Grad,
    #[serde(rename = "GNNExplainer")]
    GnnExplainer(GnnExplainerParams),
    #[serde(rename = "PGM")]
    Pgm(PgmParams),
    #[serde(rename = "GNNShap")]
    GnnShap(GnnShapParams),
    #[serde(rename = "GraphSVX")]
    GraphSvx(GraphSvxParams),
    RandomNodeMask,
    RandomEdgeMask,
    RandomEdgeAndFeatureMask,
}

impl ExplainerConfig {
    /// Parses a bare explainer name with default hyperparameters.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "Grad" => ExplainerConfig::Grad,
            "GNNExplainer" => ExplainerConfig::GnnExplainer(Default::default()),
            "PGM" => ExplainerConfig::Pgm(Default::default()),
            "GNNShap" => ExplainerConfig::GnnShap(Default::default()),
            "GraphSVX" => ExplainerConfig::GraphSvx(Default::default()),
            "RandomNodeMask" => ExplainerConfig::RandomNodeMask,
            "RandomEdgeMask" => ExplainerConfig::RandomEdgeMask,
            "RandomEdgeAndFeatureMask" => ExplainerConfig::RandomEdgeAndFeatureMask,
            other => return Err(Error::Input(format!("unknown explainer {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExplainerConfig::Grad => "Grad",
            ExplainerConfig::GnnExplainer(_) => "GNNExplainer",
            ExplainerConfig::Pgm(_) => "PGM",
            ExplainerConfig::GnnShap(_) => "GNNShap",
            ExplainerConfig::GraphSvx(_) => "GraphSVX",
            ExplainerConfig::RandomNodeMask => "RandomNodeMask",
            ExplainerConfig::RandomEdgeMask => "RandomEdgeMask",
            ExplainerConfig::RandomEdgeAndFeatureMask => "RandomEdgeAndFeatureMask",
        }
    }

    pub fn mask_type(&self) -> MaskType {
        match self {
            ExplainerConfig::Grad | ExplainerConfig::Pgm(_) | ExplainerConfig::RandomNodeMask => {
                MaskType::Node
            }
            ExplainerConfig::GnnExplainer(_) | ExplainerConfig::RandomEdgeAndFeatureMask => {
                MaskType::EdgeFeature
            }
            ExplainerConfig::GnnShap(_) | ExplainerConfig::RandomEdgeMask => MaskType::Edge,
            ExplainerConfig::GraphSvx(p) => {
                if p.lift_to_edges {
                    MaskType::Edge
                } else {
                    MaskType::Node
                }
            }
        }
    }

    /// The random baseline scoring the same support.
    pub fn random_counterpart(&self) -> ExplainerConfig {
        match self.mask_type() {
            MaskType::Node => ExplainerConfig::RandomNodeMask,
            MaskType::Edge => ExplainerConfig::RandomEdgeMask,
            MaskType::EdgeFeature => ExplainerConfig::RandomEdgeAndFeatureMask,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(
            self,
            ExplainerConfig::RandomNodeMask
                | ExplainerConfig::RandomEdgeMask
                | ExplainerConfig::RandomEdgeAndFeatureMask
        )
    }
}

/// Runs the configured explainer on one target's local views.
pub fn explain(
    ctx: &ExplainContext<'_>,
    local: &LocalViewSet,
    config: &ExplainerConfig,
    seed: u64,
) -> Result<Explanation> {
    let mut e = match config {
        ExplainerConfig::Grad => grad_explain(ctx, local)?,
        ExplainerConfig::GnnExplainer(p) => gnnexplainer_explain(ctx, local, p)?,
        ExplainerConfig::Pgm(p) => pgm_explain(ctx, local, p, seed)?,
        ExplainerConfig::GnnShap(p) => gnnshap_explain(ctx, local, p, seed)?,
        ExplainerConfig::GraphSvx(p) => graphsvx_explain(ctx, local, p, seed)?,
        _ => {
            let class = LocalGame::new(ctx, local)?.class;
            let mut e = random_baseline(local, &ctx.model.view_names, config.mask_type(), seed)?;
            e.explainer = config.name().into();
            e.predicted_class = class;
            e
        }
    };
    e.seed = seed;
    e.hyperparameters = serde_json::to_value(config)?;
    Ok(e)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::hetgraph::{extract_local_views, MetaPathView};
    use crate::predictors::{Backbone, PredictorConfig};
    use crate::rng::{self, Stream};
    use crate::tensor::Matrix;
    use rand::Rng as _;

    /// A random untrained model on a small random two-view graph.
    pub(crate) struct Fixture {
        pub model: TrainedPredictor,
        pub data: TargetData,
    }

    pub(crate) fn fixture(backbone: Backbone, seed: u64) -> Fixture {
        let mut rng = rng::stream(seed, Stream::Synth, 99);
        let n = 12;
        let d = 5;
        let mut views = Vec::new();
        for (m, p) in [0.3, 0.25].into_iter().enumerate() {
            let mut pairs = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.random::<f64>() < p {
                        pairs.push((a, b));
                    }
                }
            }
            let mp = crate::hetgraph::MetaPath::parse(&["r", "~r"]);
            views.push(MetaPathView::from_edges(format!("V{m}"), mp, n, pairs).unwrap());
        }
        let data: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let features = Matrix::from_vec(n, d, data).unwrap();
        let mut config = PredictorConfig::for_backbone(backbone);
        config.hidden_units = 4;
        config.attention_heads = 2;
        config.semantic_hidden = 6;
        config.seed = seed;
        let model =
            TrainedPredictor::init(&config, d, 3, vec!["V0".into(), "V1".into()]).unwrap();
        let labels = (0..n).map(|i| i % 3).collect();
        Fixture {
            model,
            data: TargetData {
                views,
                features: std::sync::Arc::new(features),
                labels,
                num_classes: 3,
                splits: crate::hetgraph::Splits {
                    train: vec![0, 1, 2, 3],
                    val: vec![4, 5],
                    test: vec![6, 7, 8, 9, 10, 11],
                },
            },
        }
    }

    impl Fixture {
        pub fn ctx(&self, over: &AttentionOverride) -> ExplainContext<'_> {
            ExplainContext::new(&self.model, &self.data, over).unwrap()
        }

        pub fn local(&self, v: usize) -> LocalViewSet {
            extract_local_views(&self.data.views, &self.data.features, v, 2).unwrap()
        }
    }

    #[test]
    fn local_game_reproduces_full_prediction() {
        for backbone in [Backbone::Han, Backbone::HanGcn] {
            let f = fixture(backbone, 3);
            let ctx = f.ctx(&AttentionOverride::Learned);
            let full = f
                .model
                .forward(&f.data.views, &f.data.features, &AttentionOverride::Learned)
                .unwrap();
            for v in 0..12 {
                let game = LocalGame::new(&ctx, &f.local(v)).unwrap();
                assert_eq!(game.class, ctx.predictions[v]);
                let local = f.model.decode(&game.embeddings, &ctx.attention).unwrap();
                for (a, b) in local.iter().zip(full.row(v)) {
                    assert!((a - b).abs() < 1e-10, "{backbone:?} node {v}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn config_names_round_trip() {
        for name in [
            "Grad",
            "GNNExplainer",
            "PGM",
            "GNNShap",
            "GraphSVX",
            "RandomNodeMask",
            "RandomEdgeMask",
            "RandomEdgeAndFeatureMask",
        ] {
            let c = ExplainerConfig::from_name(name).unwrap();
            assert_eq!(c.name(), name);
            let json = serde_json::to_string(&c).unwrap();
            let back: ExplainerConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(back, c);
            assert_eq!(c.random_counterpart().mask_type(), c.mask_type());
        }
        assert!(ExplainerConfig::from_name("xPath").is_err());
    }

    #[test]
    fn every_explainer_is_view_factorized_and_deterministic() {
        let f = fixture(Backbone::HanGcn, 5);
        let ctx = f.ctx(&AttentionOverride::Learned);
        let local = f.local(2);
        let before = local.clone();
        for name in [
            "Grad",
            "GNNExplainer",
            "PGM",
            "GNNShap",
            "GraphSVX",
            "RandomNodeMask",
            "RandomEdgeMask",
            "RandomEdgeAndFeatureMask",
        ] {
            let mut cfg = ExplainerConfig::from_name(name).unwrap();
            if let ExplainerConfig::GnnExplainer(p) = &mut cfg {
                p.epochs = 20;
            }
            let a = explain(&ctx, &local, &cfg, 11).unwrap();
            let b = explain(&ctx, &local, &cfg, 11).unwrap();
            assert_eq!(a, b, "{name} not deterministic");
            a.check().unwrap();
            assert_eq!(a.views.len(), 2);
            for (vs, lv) in a.views.iter().zip(&local.views) {
                assert_eq!(vs.nodes, lv.nodes);
                assert_eq!(vs.edges, lv.edges);
            }
            // explainers never mutate their input
            assert_eq!(local, before);
        }
    }
}
