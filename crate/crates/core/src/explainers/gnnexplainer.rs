use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ExplainContext, Explanation, LocalGame, MaskType};
use crate::error::{Error, Result};
use crate::hetgraph::LocalViewSet;
use crate::predictors::{Messages, ViewInput};
use crate::tensor::{sigmoid, Adam, Matrix, Tape, Var};

const EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnExplainerParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub prediction_weight: f64,
    /// Weight on the summed edge-mask values.
    pub edge_size: f64,
    pub edge_entropy: f64,
    /// Weight on the mean feature-mask value.
    pub feature_size: f64,
    pub feature_entropy: f64,
    /// Weight on the smoothness of the predicted-class indicator over the
    /// masked views.
    pub laplacian: f64,
}

impl Default for GnnExplainerParams {
    fn default() -> Self {
        GnnExplainerParams {
            epochs: 100,
            learning_rate: 0.1,
            prediction_weight: 1.0,
            edge_size: 0.005,
            edge_entropy: 1.0,
            feature_size: 1.0,
            feature_entropy: 0.1,
            laplacian: 1.0,
        }
    }
}

/// Mean binary entropy of mask values `s`.
fn entropy(tape: &mut Tape, s: Var) -> Var {
    let ls = tape.add_const(s, EPS);
    let ls = tape.log(ls);
    let a = tape.mul(s, ls).expect("same shape");
    let one_minus = tape.scale(s, -1.0);
    let one_minus = tape.add_const(one_minus, 1.0);
    let lo = tape.add_const(one_minus, EPS);
    let lo = tape.log(lo);
    let b = tape.mul(one_minus, lo).expect("same shape");
    let h = tape.add(a, b).expect("same shape");
    let h = tape.mean(h);
    tape.scale(h, -1.0)
}

/// Jointly optimises per-view edge masks and a shared feature mask so the
/// masked input keeps the prediction, under size, entropy and smoothness
/// penalties. Returns the sigmoid masks.
pub fn gnnexplainer_explain(
    ctx: &ExplainContext<'_>,
    local: &LocalViewSet,
    params: &GnnExplainerParams,
) -> Result<Explanation> {
    let game = LocalGame::new(ctx, local)?;
    let class = game.class;
    let model = ctx.model;
    let d = model.in_dim;
    let messages: Vec<Messages> = local
        .views
        .iter()
        .map(|v| Messages::new(v.num_nodes(), &v.edges))
        .collect();
    let targets: Vec<usize> = local.views.iter().map(|v| v.target).collect();
    // endpoint lists and predicted-class indicators for the smoothness term
    let ends: Vec<(Arc<Vec<usize>>, Arc<Vec<usize>>, Arc<Vec<usize>>, Arc<Vec<usize>>)> = local
        .views
        .iter()
        .map(|v| {
            let a: Vec<usize> = v.edges.iter().map(|e| e.0).collect();
            let b: Vec<usize> = v.edges.iter().map(|e| e.1).collect();
            let rows = [b.clone(), a.clone()].concat();
            let cols = [a.clone(), b.clone()].concat();
            (Arc::new(a), Arc::new(b), Arc::new(rows), Arc::new(cols))
        })
        .collect();
    let indicators: Vec<Matrix> = local
        .views
        .iter()
        .map(|v| {
            let data = v
                .nodes
                .iter()
                .map(|&g| f64::from(u8::from(ctx.predictions.get(g) == Some(&class))))
                .collect();
            Matrix::from_vec(v.num_nodes(), 1, data).expect("column")
        })
        .collect();

    let mut edge_logits: Vec<Matrix> = local
        .views
        .iter()
        .map(|v| Matrix::zeros(v.edges.len(), 1))
        .collect();
    let mut feature_logits = Matrix::zeros(1, d);
    let mut opt = Adam::new(params.learning_rate, 0.0);

    for epoch in 0..params.epochs {
        let mut tape = Tape::new();
        let weights = model.param_vars(&mut tape, false);
        let ma: Vec<Var> = edge_logits.iter().map(|m| tape.param(m.clone())).collect();
        let mx = tape.param(feature_logits.clone());
        let sx = tape.sigmoid(mx);
        let mut inputs = Vec::with_capacity(local.num_views());
        let mut edge_masks = Vec::with_capacity(local.num_views());
        for (m, view) in local.views.iter().enumerate() {
            let ones = tape.constant(Matrix::filled(view.num_nodes(), 1, 1.0));
            let spread = tape.matmul(ones, sx)?;
            let x = tape.constant(view.features.clone());
            let x = tape.mul(spread, x)?;
            let sa = if view.edges.is_empty() {
                None
            } else {
                Some(tape.sigmoid(ma[m]))
            };
            edge_masks.push(sa);
            inputs.push(ViewInput {
                messages: &messages[m],
                edge_weights: sa,
                features: x,
            });
        }
        let logits = model.forward_local_tape(&mut tape, &weights, &inputs, &targets, &ctx.attention)?;
        let ce = tape.cross_entropy(logits, Arc::new(vec![class]))?;
        let mut loss = tape.scale(ce, params.prediction_weight);
        for (m, sa) in edge_masks.iter().enumerate() {
            let Some(sa) = *sa else { continue };
            let size = tape.sum(sa);
            let size = tape.scale(size, params.edge_size);
            let ent = entropy(&mut tape, sa);
            let ent = tape.scale(ent, params.edge_entropy);
            let n = local.views[m].num_nodes();
            let (a, b, rows, cols) = &ends[m];
            let both = tape.concat_rows(&[sa, sa])?;
            let ones = tape.constant(Matrix::filled(n, 1, 1.0));
            let deg = tape.spmm(Arc::clone(rows), Arc::clone(cols), both, ones, 1, n)?;
            let deg = tape.add_const(deg, 1e-10);
            let dinv = tape.powf(deg, -0.5);
            let y = tape.constant(indicators[m].clone());
            let q = tape.mul(dinv, y)?;
            let qa = tape.gather_rows(q, Arc::clone(a))?;
            let qb = tape.gather_rows(q, Arc::clone(b))?;
            let diff = tape.sub(qa, qb)?;
            let sq = tape.mul(diff, diff)?;
            let lap = tape.mul(sq, sa)?;
            let lap = tape.sum(lap);
            let lap = tape.scale(lap, params.laplacian);
            for term in [size, ent, lap] {
                loss = tape.add(loss, term)?;
            }
        }
        let fsize = tape.mean(sx);
        let fsize = tape.scale(fsize, params.feature_size);
        let fent = entropy(&mut tape, sx);
        let fent = tape.scale(fent, params.feature_entropy);
        loss = tape.add(loss, fsize)?;
        loss = tape.add(loss, fent)?;

        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::ExplanationFailed {
                node: local.target,
                epoch,
                reason: format!("loss is {value}"),
            });
        }
        let mut grads = tape.backward(loss)?;
        let mut g: Vec<Matrix> = ma
            .iter()
            .zip(&edge_logits)
            .map(|(&v, cur)| grads.take(v).unwrap_or_else(|| Matrix::zeros(cur.rows(), 1)))
            .collect();
        g.push(grads.take(mx).unwrap_or_else(|| Matrix::zeros(1, d)));
        if g.iter().any(|m| !m.all_finite()) {
            return Err(Error::ExplanationFailed {
                node: local.target,
                epoch,
                reason: "non-finite mask gradient".into(),
            });
        }
        opt.step(
            edge_logits.iter_mut().chain(std::iter::once(&mut feature_logits)),
            &g,
        )?;
    }

    let mut e = Explanation::zeros(
        "GNNExplainer",
        local,
        &model.view_names,
        MaskType::EdgeFeature,
        class,
        0,
    );
    for (view, logits) in e.views.iter_mut().zip(&edge_logits) {
        view.scores = logits.data().iter().map(|&x| sigmoid(x)).collect();
    }
    e.feature_mask = Some(feature_logits.data().iter().map(|&x| sigmoid(x)).collect());
    Ok(e)
}
