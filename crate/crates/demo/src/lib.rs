//! Browser demo: train a small model on a synthetic two-view graph, explain
//! one node, and re-score the test split under fixed fusion weights.
//!
//! `Session` is the plain Rust API (JSON strings in and out); `DemoSession`
//! wraps it for wasm-bindgen.

use hetexplain::explainers::{explain, ExplainContext, ExplainerConfig};
use hetexplain::faithfulness::{evaluate_node, top_k_hard_mask, EvalConfig};
use hetexplain::hetgraph::{extract_local_views, TargetData};
use hetexplain::io::synth::{synthesize, SynthParams};
use hetexplain::metrics::{macro_f1, micro_f1};
use hetexplain::predictors::{probabilities, train, AttentionOverride, PredictorConfig, TrainedPredictor};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRequest {
    pub synth: SynthParams,
    pub predictor: PredictorConfig,
}

impl Default for TrainRequest {
    fn default() -> Self {
        TrainRequest {
            synth: SynthParams {
                target_nodes: 150,
                ..Default::default()
            },
            predictor: PredictorConfig::han(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub views: Vec<String>,
    pub attention: Vec<f64>,
    pub best_epoch: usize,
    pub test_macro_f1: f64,
    pub test_micro_f1: f64,
    pub test_nodes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViewExplanation {
    pub view: String,
    /// Global ids of the local view's nodes.
    pub nodes: Vec<usize>,
    /// Edges as local indices.
    pub edges: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
    /// Elements kept at the requested sparsity, aligned with `scores`.
    pub kept: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeReport {
    pub node: usize,
    pub label: usize,
    pub predicted: usize,
    pub probabilities: Vec<f64>,
    pub explainer: String,
    pub scores_edges: bool,
    pub views: Vec<ViewExplanation>,
    pub keep_only_prediction: usize,
    pub remove_only_prediction: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterventionReport {
    pub condition: String,
    pub attention: Vec<f64>,
    pub test_macro_f1: f64,
    pub test_micro_f1: f64,
}

pub struct Session {
    data: TargetData,
    model: TrainedPredictor,
    summary: TrainSummary,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Session {
    /// Synthesizes the dataset and trains one model. `request` is a JSON
    /// `TrainRequest`; missing fields take their defaults.
    pub fn train(request: &str) -> Result<Session, String> {
        let req: TrainRequest = if request.trim().is_empty() {
            TrainRequest::default()
        } else {
            serde_json::from_str(request).map_err(err)?
        };
        req.predictor.validate().map_err(err)?;
        let ds = synthesize(&req.synth).map_err(err)?;
        let data = TargetData::from_graph(&ds.graph, &ds.meta_paths).map_err(err)?;
        let model = train(&data, &req.predictor).map_err(err)?;
        let mut session = Session {
            summary: TrainSummary {
                views: data.views.iter().map(|v| v.name.clone()).collect(),
                attention: Vec::new(),
                best_epoch: model.best_epoch,
                test_macro_f1: 0.0,
                test_micro_f1: 0.0,
                test_nodes: data.splits.test.clone(),
            },
            data,
            model,
        };
        let learned = session.scores(&AttentionOverride::Learned)?;
        session.summary.attention = learned.attention;
        session.summary.test_macro_f1 = learned.test_macro_f1;
        session.summary.test_micro_f1 = learned.test_micro_f1;
        Ok(session)
    }

    pub fn summary(&self) -> &TrainSummary {
        &self.summary
    }

    /// Explains `node` with the named explainer and reports the keep-only
    /// and remove-only predictions at `sparsity`.
    pub fn explain(&self, node: usize, explainer: &str, sparsity: f64) -> Result<NodeReport, String> {
        if node >= self.data.num_nodes() {
            return Err(format!("node {node} out of range (0..{})", self.data.num_nodes()));
        }
        EvalConfig {
            sparsity,
            ..Default::default()
        }
        .validate()
        .map_err(err)?;
        let config = ExplainerConfig::from_name(explainer).map_err(err)?;
        let ctx = ExplainContext::new(&self.model, &self.data, &AttentionOverride::Learned).map_err(err)?;
        let local = extract_local_views(&self.data.views, &self.data.features, node, 2).map_err(err)?;
        let e = explain(&ctx, &local, &config, self.model.config.seed).map_err(err)?;
        let mask = top_k_hard_mask(&e, sparsity).map_err(err)?;
        let outcome = evaluate_node(&self.model, &ctx.attention, &local, &e, sparsity).map_err(err)?;
        let logits = self.model.local_logits(&local, &ctx.attention).map_err(err)?;
        Ok(NodeReport {
            node,
            label: self.data.labels[node],
            predicted: outcome.original,
            probabilities: probabilities(&logits),
            explainer: e.explainer.clone(),
            scores_edges: e.mask_type.scores_edges(),
            views: e
                .views
                .iter()
                .zip(mask.views)
                .map(|(v, kept)| ViewExplanation {
                    view: v.view.clone(),
                    nodes: v.nodes.clone(),
                    edges: v.edges.clone(),
                    scores: v.scores.clone(),
                    kept,
                })
                .collect(),
            keep_only_prediction: outcome.keep_only,
            remove_only_prediction: outcome.remove_only,
        })
    }

    /// Test-split scores with the fusion weights replaced. `condition` is
    /// `learned`, `balanced` or `one_hot_<view>`.
    pub fn intervene(&self, condition: &str) -> Result<InterventionReport, String> {
        let over = match condition {
            "learned" => AttentionOverride::Learned,
            "balanced" => AttentionOverride::Balanced,
            c => match c.strip_prefix("one_hot_").and_then(|m| m.parse().ok()) {
                Some(m) => AttentionOverride::OneHot(m),
                None => return Err(format!("unknown condition {c:?}")),
            },
        };
        self.scores(&over)
    }

    fn scores(&self, over: &AttentionOverride) -> Result<InterventionReport, String> {
        let inf = self.model.infer(&self.data.views, &self.data.features, over).map_err(err)?;
        let pred = inf.predictions();
        let test = &self.data.splits.test;
        let p: Vec<usize> = test.iter().map(|&i| pred[i]).collect();
        let t: Vec<usize> = test.iter().map(|&i| self.data.labels[i]).collect();
        Ok(InterventionReport {
            condition: over.label(),
            attention: inf.attention,
            test_macro_f1: 100.0 * macro_f1(&p, &t, self.data.num_classes),
            test_micro_f1: 100.0 * micro_f1(&p, &t),
        })
    }
}

fn to_json<T: Serialize>(x: &T) -> String {
    serde_json::to_string(x).expect("report types serialize")
}

#[wasm_bindgen]
pub struct DemoSession(Session);

#[wasm_bindgen]
impl DemoSession {
    #[wasm_bindgen(constructor)]
    pub fn new(request: &str) -> Result<DemoSession, JsError> {
        Session::train(request).map(DemoSession).map_err(|e| JsError::new(&e))
    }

    pub fn summary(&self) -> String {
        to_json(self.0.summary())
    }

    pub fn explain(&self, node: usize, explainer: &str, sparsity: f64) -> Result<String, JsError> {
        self.0.explain(node, explainer, sparsity).map(|r| to_json(&r)).map_err(|e| JsError::new(&e))
    }

    pub fn intervene(&self, condition: &str) -> Result<String, JsError> {
        self.0.intervene(condition).map(|r| to_json(&r)).map_err(|e| JsError::new(&e))
    }
}
