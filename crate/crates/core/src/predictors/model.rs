use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{AttentionOverride, Backbone, PredictorConfig, SemanticInit};
use crate::error::{Error, Result};
use crate::hetgraph::{LocalViewSet, MetaPathView};
use crate::rng::{self, Rng, Stream};
use crate::tensor::{glorot, log_sum_exp, softmax_in_place, Matrix, Tape, Var};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Directed message lists for one view: every undirected edge in both
/// directions followed by one self loop per node.
#[derive(Debug, Clone)]
pub struct Messages {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub dst: Arc<Vec<usize>>,
    pub src: Arc<Vec<usize>>,
}

impl Messages {
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let e = edges.len();
        let mut dst = Vec::with_capacity(2 * e + num_nodes);
        let mut src = Vec::with_capacity(2 * e + num_nodes);
        for &(a, b) in edges {
            dst.push(b);
            src.push(a);
        }
        for &(a, b) in edges {
            dst.push(a);
            src.push(b);
        }
        for i in 0..num_nodes {
            dst.push(i);
            src.push(i);
        }
        Messages {
            num_nodes,
            num_edges: e,
            dst: Arc::new(dst),
            src: Arc::new(src),
        }
    }

    /// Symmetric GCN coefficients `1/sqrt(d_dst d_src)` with self loops
    /// counted in the degree.
    fn gcn_coefficients(&self) -> Matrix {
        let mut deg = vec![0.0f64; self.num_nodes];
        for &d in self.dst.iter() {
            deg[d] += 1.0;
        }
        let data = self
            .dst
            .iter()
            .zip(self.src.iter())
            .map(|(&d, &s)| 1.0 / (deg[d] * deg[s]).sqrt())
            .collect();
        Matrix::from_vec(self.dst.len(), 1, data).expect("coefficient column")
    }
}

/// One view's input on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ViewInput<'a> {
    pub messages: &'a Messages,
    /// Optional `E x 1` multiplicative weights on the undirected edges.
    pub edge_weights: Option<Var>,
    pub features: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

/// On-disk checkpoint document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format_version: u32,
    config: PredictorConfig,
    in_dim: usize,
    num_classes: usize,
    view_names: Vec<String>,
    best_epoch: usize,
    history: Vec<EpochRecord>,
    weights: Vec<NamedTensor>,
}

/// Output of a full-graph inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub logits: Matrix,
    /// Attention the model computes on this input.
    pub learned_attention: Vec<f64>,
    /// Fusion weights actually used (after any override).
    pub attention: Vec<f64>,
}

impl Inference {
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.logits.rows()).map(|r| self.logits.argmax_row(r)).collect()
    }
}

/// Meta-path predictor: one encoder per view, semantic-attention fusion and
/// a linear decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPredictor {
    pub config: PredictorConfig,
    pub in_dim: usize,
    pub num_classes: usize,
    pub view_names: Vec<String>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    weights: Vec<Arc<Matrix>>,
}

impl TrainedPredictor {
    /// Fresh, randomly initialised model.
    pub fn init(
        config: &PredictorConfig,
        in_dim: usize,
        num_classes: usize,
        view_names: Vec<String>,
    ) -> Result<Self> {
        config.validate()?;
        if view_names.is_empty() {
            return Err(Error::Parameter("at least one view is required".into()));
        }
        if num_classes == 0 {
            return Err(Error::Parameter("at least one class is required".into()));
        }
        let mut rng = rng::stream(config.seed, Stream::Init, 0);
        let heads = config.heads();
        let f = config.hidden_units;
        let d = config.embedding_dim();
        let mut weights = Vec::new();
        for _ in 0..view_names.len() {
            weights.push(glorot(in_dim, d, &mut rng));
            if config.backbone == Backbone::Han {
                for _ in 0..2 {
                    let mut a = Matrix::zeros(d, heads);
                    for h in 0..heads {
                        let v = glorot(f, 1, &mut rng);
                        for i in 0..f {
                            a.set(h * f + i, h, v.get(i, 0));
                        }
                    }
                    weights.push(a);
                }
            }
            weights.push(Matrix::zeros(1, d));
        }
        let scale = match config.semantic_init {
            SemanticInit::Glorot => 1.0,
            SemanticInit::Scaled { scale } => scale,
        };
        let hs = config.semantic_hidden;
        weights.push(glorot(d, hs, &mut rng).map(|x| x * scale));
        weights.push(Matrix::zeros(1, hs));
        weights.push(glorot(hs, 1, &mut rng).map(|x| x * scale));
        weights.push(glorot(d, num_classes, &mut rng));
        weights.push(Matrix::zeros(1, num_classes));
        Ok(TrainedPredictor {
            config: config.clone(),
            in_dim,
            num_classes,
            view_names,
            history: Vec::new(),
            best_epoch: 0,
            weights: weights.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn num_views(&self) -> usize {
        self.view_names.len()
    }

    fn per_view(&self) -> usize {
        match self.config.backbone {
            Backbone::Han => 4,
            Backbone::HanGcn => 2,
        }
    }

    fn enc(&self, m: usize, k: usize) -> usize {
        m * self.per_view() + k
    }

    fn head_index(&self) -> usize {
        self.num_views() * self.per_view()
    }

    fn weight_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for m in 0..self.num_views() {
            names.push(format!("view{m}.weight"));
            if self.config.backbone == Backbone::Han {
                names.push(format!("view{m}.attn_src"));
                names.push(format!("view{m}.attn_dst"));
            }
            names.push(format!("view{m}.bias"));
        }
        for n in [
            "semantic.weight",
            "semantic.bias",
            "semantic.query",
            "decoder.weight",
            "decoder.bias",
        ] {
            names.push(n.into());
        }
        names
    }

    pub fn weights(&self) -> &[Arc<Matrix>] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Arc<Matrix>] {
        &mut self.weights
    }

    /// Zeroes gradient entries that would break the block-diagonal structure
    /// of the per-head attention vectors.
    pub(crate) fn project_gradients(&self, grads: &mut [Matrix]) {
        if self.config.backbone != Backbone::Han {
            return;
        }
        let f = self.config.hidden_units;
        for m in 0..self.num_views() {
            for k in [1, 2] {
                let g = &mut grads[self.enc(m, k)];
                for r in 0..g.rows() {
                    for h in 0..g.cols() {
                        if r / f != h {
                            g.set(r, h, 0.0);
                        }
                    }
                }
            }
        }
    }

    /// Records all weights on `tape`.
    pub fn param_vars(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.weights
            .iter()
            .map(|w| tape.leaf(Arc::clone(w), trainable))
            .collect()
    }

    /// Per-view encoder on a tape; returns `N x D` embeddings.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &[Var],
        m: usize,
        input: ViewInput<'_>,
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let msg = input.messages;
        let n = msg.num_nodes;
        if tape.shape(input.features) != (n, self.in_dim) {
            return Err(Error::dim(
                "encode",
                format!(
                    "features {:?} for {n} nodes x {} dims",
                    tape.shape(input.features),
                    self.in_dim
                ),
            ));
        }
        let p = self.config.dropout;
        let mut dropout = dropout;
        let x = match dropout.as_deref_mut() {
            Some(r) => tape.dropout(input.features, p, r)?,
            None => input.features,
        };
        let message_weights = match input.edge_weights {
            Some(w) => {
                if tape.shape(w) != (msg.num_edges, 1) {
                    return Err(Error::dim(
                        "encode",
                        format!("edge weights {:?} for {} edges", tape.shape(w), msg.num_edges),
                    ));
                }
                let ones = tape.constant(Matrix::filled(n, 1, 1.0));
                Some(tape.concat_rows(&[w, w, ones])?)
            }
            None => None,
        };
        let z = tape.matmul(x, params[self.enc(m, 0)])?;
        let out = match self.config.backbone {
            Backbone::Han => {
                let heads = self.config.heads();
                let sl = tape.matmul(z, params[self.enc(m, 1)])?;
                let sr = tape.matmul(z, params[self.enc(m, 2)])?;
                let from_src = tape.gather_rows(sl, Arc::clone(&msg.src))?;
                let from_dst = tape.gather_rows(sr, Arc::clone(&msg.dst))?;
                let e = tape.add(from_src, from_dst)?;
                let e = tape.leaky_relu(e, self.config.leaky_relu_slope);
                let mut alpha = tape.edge_softmax(e, Arc::clone(&msg.dst), n)?;
                if let Some(r) = dropout {
                    alpha = tape.dropout(alpha, p, r)?;
                }
                if let Some(w) = message_weights {
                    alpha = tape.mul_col(alpha, w)?;
                }
                let agg = tape.spmm(Arc::clone(&msg.dst), Arc::clone(&msg.src), alpha, z, heads, n)?;
                tape.add_row(agg, params[self.enc(m, 3)])?
            }
            Backbone::HanGcn => {
                let coef = match message_weights {
                    Some(w) => {
                        let ones = tape.constant(Matrix::filled(n, 1, 1.0));
                        let deg =
                            tape.spmm(Arc::clone(&msg.dst), Arc::clone(&msg.src), w, ones, 1, n)?;
                        let dinv = tape.powf(deg, -0.5);
                        let a = tape.gather_rows(dinv, Arc::clone(&msg.dst))?;
                        let b = tape.gather_rows(dinv, Arc::clone(&msg.src))?;
                        let ab = tape.mul(a, b)?;
                        tape.mul(ab, w)?
                    }
                    None => tape.constant(msg.gcn_coefficients()),
                };
                let agg = tape.spmm(Arc::clone(&msg.dst), Arc::clone(&msg.src), coef, z, 1, n)?;
                tape.add_row(agg, params[self.enc(m, 1)])?
            }
        };
        Ok(tape.elu(out))
    }

    /// Semantic attention over view embeddings: `softmax_m mean_i q·tanh(W h_i + b)`.
    pub fn semantic_attention_tape(&self, tape: &mut Tape, params: &[Var], embeddings: &[Var]) -> Result<Var> {
        let base = self.head_index();
        let mut scores = Vec::with_capacity(embeddings.len());
        for &h in embeddings {
            let t = tape.matmul(h, params[base])?;
            let t = tape.add_row(t, params[base + 1])?;
            let t = tape.tanh(t);
            let s = tape.matmul(t, params[base + 2])?;
            scores.push(tape.mean_rows(s)?);
        }
        let w = tape.concat_cols(&scores)?;
        Ok(tape.softmax_rows(w))
    }

    /// Fuses `embeddings` with a `1 x M` attention row on the tape and decodes.
    pub fn fuse_and_decode(
        &self,
        tape: &mut Tape,
        params: &[Var],
        embeddings: &[Var],
        attention: Var,
    ) -> Result<Var> {
        if tape.shape(attention) != (1, embeddings.len()) {
            return Err(Error::dim(
                "fuse",
                format!("attention {:?} for {} views", tape.shape(attention), embeddings.len()),
            ));
        }
        let mut fused: Option<Var> = None;
        for (m, &h) in embeddings.iter().enumerate() {
            let b = tape.column(attention, m)?;
            let term = tape.mul_scalar(h, b)?;
            fused = Some(match fused {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let fused = fused.ok_or_else(|| Error::dim("fuse", "no views"))?;
        let base = self.head_index();
        let logits = tape.matmul(fused, params[base + 3])?;
        tape.add_row(logits, params[base + 4])
    }

    /// Full-graph forward on a tape. Returns `(logits, learned attention)`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        inputs: &[ViewInput<'_>],
        attention: &AttentionOverride,
        mut dropout: Option<&mut Rng>,
    ) -> Result<(Var, Var)> {
        self.check_views(inputs.len())?;
        let mut embeddings = Vec::with_capacity(inputs.len());
        for (m, input) in inputs.iter().enumerate() {
            embeddings.push(self.encode(tape, params, m, *input, dropout.as_deref_mut())?);
        }
        let learned = self.semantic_attention_tape(tape, params, &embeddings)?;
        let used = match attention.fixed(inputs.len())? {
            Some(b) => tape.constant(Matrix::from_vec(1, b.len(), b)?),
            None => learned,
        };
        let logits = self.fuse_and_decode(tape, params, &embeddings, used)?;
        Ok((logits, learned))
    }

    /// Logits for the target of a local view set with fixed fusion weights.
    /// `inputs[m]` must describe `local.views[m]`; returns a `1 x C` row.
    pub fn forward_local_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        inputs: &[ViewInput<'_>],
        targets: &[usize],
        attention: &[f64],
    ) -> Result<Var> {
        self.check_views(inputs.len())?;
        if targets.len() != inputs.len() || attention.len() != inputs.len() {
            return Err(Error::dim(
                "forward_local",
                format!(
                    "{} views, {} targets, {} attention weights",
                    inputs.len(),
                    targets.len(),
                    attention.len()
                ),
            ));
        }
        let mut rows = Vec::with_capacity(inputs.len());
        for (m, input) in inputs.iter().enumerate() {
            let h = self.encode(tape, params, m, *input, None)?;
            rows.push(tape.gather_rows(h, Arc::new(vec![targets[m]]))?);
        }
        let beta = tape.constant(Matrix::from_vec(1, attention.len(), attention.to_vec())?);
        self.fuse_and_decode(tape, params, &rows, beta)
    }

    fn check_views(&self, n: usize) -> Result<()> {
        if n != self.num_views() {
            return Err(Error::dim(
                "forward",
                format!("{n} views for a model trained on {}", self.num_views()),
            ));
        }
        Ok(())
    }

    /// Eval-mode full-graph inference.
    pub fn infer(
        &self,
        views: &[MetaPathView],
        features: &Matrix,
        attention: &AttentionOverride,
    ) -> Result<Inference> {
        let messages: Vec<Messages> = views
            .iter()
            .map(|v| Messages::new(v.num_nodes(), v.edges()))
            .collect();
        self.infer_with(&messages, features, attention)
    }

    pub(crate) fn infer_with(
        &self,
        messages: &[Messages],
        features: &Matrix,
        attention: &AttentionOverride,
    ) -> Result<Inference> {
        let mut tape = Tape::new();
        let params = self.param_vars(&mut tape, false);
        let x = tape.constant(features.clone());
        let inputs: Vec<ViewInput<'_>> = messages
            .iter()
            .map(|m| ViewInput {
                messages: m,
                edge_weights: None,
                features: x,
            })
            .collect();
        let (logits, learned) = self.forward_tape(&mut tape, &params, &inputs, attention, None)?;
        let learned_attention = tape.value(learned).data().to_vec();
        let attention = attention.resolve(&learned_attention)?;
        Ok(Inference {
            logits: tape.value(logits).clone(),
            learned_attention,
            attention,
        })
    }

    /// Logits for every target-type node.
    pub fn forward(
        &self,
        views: &[MetaPathView],
        features: &Matrix,
        attention: &AttentionOverride,
    ) -> Result<Matrix> {
        Ok(self.infer(views, features, attention)?.logits)
    }

    /// Learned semantic attention on the given graph; sums to one.
    pub fn semantic_attention(&self, views: &[MetaPathView], features: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .infer(views, features, &AttentionOverride::Learned)?
            .learned_attention)
    }

    /// `dCE(target logits, class) / dX^(m)` for every view of `local`, with
    /// adjacencies and fusion weights held fixed.
    pub fn grad_wrt_view_features(
        &self,
        local: &LocalViewSet,
        attention: &[f64],
        target_class: usize,
    ) -> Result<Vec<Matrix>> {
        local.check()?;
        if target_class >= self.num_classes {
            return Err(Error::Input(format!(
                "class {target_class} for {} classes",
                self.num_classes
            )));
        }
        let messages: Vec<Messages> = local
            .views
            .iter()
            .map(|v| Messages::new(v.num_nodes(), &v.edges))
            .collect();
        let mut tape = Tape::new();
        let params = self.param_vars(&mut tape, false);
        let feats: Vec<Var> = local
            .views
            .iter()
            .map(|v| tape.param(v.features.clone()))
            .collect();
        let inputs: Vec<ViewInput<'_>> = messages
            .iter()
            .zip(&feats)
            .map(|(m, &x)| ViewInput {
                messages: m,
                edge_weights: None,
                features: x,
            })
            .collect();
        let targets: Vec<usize> = local.views.iter().map(|v| v.target).collect();
        let logits = self.forward_local_tape(&mut tape, &params, &inputs, &targets, attention)?;
        let loss = tape.cross_entropy(logits, Arc::new(vec![target_class]))?;
        let shapes: Vec<(usize, usize)> = feats.iter().map(|&x| tape.shape(x)).collect();
        let grads = tape.backward(loss)?;
        Ok(feats
            .iter()
            .zip(shapes)
            .map(|(&x, s)| grads.get_or_zeros(x, s))
            .collect())
    }

    /// Eval-mode embedding of node `target` in one view, computed without a
    /// tape from only the rows it depends on.
    pub fn view_embedding(
        &self,
        m: usize,
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: &Matrix,
        target: usize,
    ) -> Result<Vec<f64>> {
        if m >= self.num_views() {
            return Err(Error::dim("view_embedding", format!("view {m}")));
        }
        if features.shape() != (num_nodes, self.in_dim) || target >= num_nodes {
            return Err(Error::dim(
                "view_embedding",
                format!("features {:?}, target {target}, {num_nodes} nodes", features.shape()),
            ));
        }
        let w = &self.weights[self.enc(m, 0)];
        Ok(self.embed_with(m, edges, target, &|u| project_row(features.row(u), w)))
    }

    /// `X W` for view `m`'s encoder; feeds [`Self::view_embedding_projected`].
    pub fn project_features(&self, m: usize, features: &Matrix) -> Result<Matrix> {
        if m >= self.num_views() || features.cols() != self.in_dim {
            return Err(Error::dim(
                "project_features",
                format!("view {m}, features {:?}", features.shape()),
            ));
        }
        let w = &self.weights[self.enc(m, 0)];
        let mut out = Matrix::zeros(features.rows(), w.cols());
        for r in 0..features.rows() {
            out.row_mut(r).copy_from_slice(&project_row(features.row(r), w));
        }
        Ok(out)
    }

    /// Same as [`Self::view_embedding`] with the rows of `X W` precomputed.
    pub fn view_embedding_projected(
        &self,
        m: usize,
        edges: &[(usize, usize)],
        projected: &Matrix,
        target: usize,
    ) -> Result<Vec<f64>> {
        if m >= self.num_views() || target >= projected.rows() {
            return Err(Error::dim("view_embedding", format!("view {m}, target {target}")));
        }
        if projected.cols() != self.weights[self.enc(m, 0)].cols() {
            return Err(Error::dim("view_embedding", format!("projected {:?}", projected.shape())));
        }
        Ok(self.embed_with(m, edges, target, &|u| projected.row(u).to_vec()))
    }

    /// Target embedding given a row projector `u -> x_u W`. Only the target
    /// and its neighbours are projected.
    pub(crate) fn embed_with(
        &self,
        m: usize,
        edges: &[(usize, usize)],
        target: usize,
        project: &dyn Fn(usize) -> Vec<f64>,
    ) -> Vec<f64> {
        let mut nbrs = Vec::new();
        for &(a, b) in edges {
            if a == target {
                nbrs.push(b);
            } else if b == target {
                nbrs.push(a);
            }
        }
        let d = self.weights[self.enc(m, 0)].cols();
        let mut out = vec![0.0; d];
        match self.config.backbone {
            Backbone::Han => {
                let heads = self.config.heads();
                let f = self.config.hidden_units;
                let (al, ar) = (&self.weights[self.enc(m, 1)], &self.weights[self.enc(m, 2)]);
                let head_dot = |z: &[f64], a: &Matrix, h: usize| -> f64 {
                    (0..f).map(|i| z[h * f + i] * a.get(h * f + i, h)).sum()
                };
                let zt = project(target);
                let mut senders: Vec<(Vec<f64>, usize)> = nbrs.iter().map(|&u| (project(u), u)).collect();
                senders.push((zt.clone(), target));
                let slope = self.config.leaky_relu_slope;
                for h in 0..heads {
                    let right = head_dot(&zt, ar, h);
                    let mut scores: Vec<f64> = senders
                        .iter()
                        .map(|(z, _)| {
                            let e = head_dot(z, al, h) + right;
                            if e > 0.0 {
                                e
                            } else {
                                slope * e
                            }
                        })
                        .collect();
                    softmax_in_place(&mut scores);
                    for ((z, _), a) in senders.iter().zip(&scores) {
                        for i in 0..f {
                            out[h * f + i] += a * z[h * f + i];
                        }
                    }
                }
                for (o, b) in out.iter_mut().zip(self.weights[self.enc(m, 3)].data()) {
                    *o += b;
                }
            }
            Backbone::HanGcn => {
                let mut deg: BTreeMap<usize, f64> = nbrs.iter().map(|&u| (u, 1.0)).collect();
                deg.insert(target, 1.0);
                for &(a, b) in edges {
                    for u in [a, b] {
                        if let Some(x) = deg.get_mut(&u) {
                            *x += 1.0;
                        }
                    }
                }
                let dt = deg[&target];
                for &u in nbrs.iter().chain(std::iter::once(&target)) {
                    let c = 1.0 / (dt * deg[&u]).sqrt();
                    for (o, zv) in out.iter_mut().zip(project(u)) {
                        *o += c * zv;
                    }
                }
                for (o, b) in out.iter_mut().zip(self.weights[self.enc(m, 1)].data()) {
                    *o += b;
                }
            }
        }
        for o in out.iter_mut() {
            if *o <= 0.0 {
                *o = o.exp_m1();
            }
        }
        out
    }

    /// Fuses per-view target embeddings with fixed weights and decodes.
    pub fn decode(&self, embeddings: &[Vec<f64>], attention: &[f64]) -> Result<Vec<f64>> {
        if embeddings.len() != self.num_views() || attention.len() != self.num_views() {
            return Err(Error::dim(
                "decode",
                format!("{} embeddings, {} weights", embeddings.len(), attention.len()),
            ));
        }
        let base = self.head_index();
        let (w, b) = (&self.weights[base + 3], &self.weights[base + 4]);
        let d = w.rows();
        let mut fused = vec![0.0; d];
        for (h, &beta) in embeddings.iter().zip(attention) {
            if h.len() != d {
                return Err(Error::dim("decode", format!("embedding of width {}", h.len())));
            }
            for (f, x) in fused.iter_mut().zip(h) {
                *f += beta * x;
            }
        }
        let mut logits = b.data().to_vec();
        for (k, &x) in fused.iter().enumerate() {
            for (o, wv) in logits.iter_mut().zip(w.row(k)) {
                *o += x * wv;
            }
        }
        Ok(logits)
    }

    /// Eval-mode target logits of a local view set with fixed fusion weights.
    pub fn local_logits(&self, local: &LocalViewSet, attention: &[f64]) -> Result<Vec<f64>> {
        let embeddings = self.local_embeddings(local)?;
        self.decode(&embeddings, attention)
    }

    pub fn local_embeddings(&self, local: &LocalViewSet) -> Result<Vec<Vec<f64>>> {
        self.check_views(local.num_views())?;
        local
            .views
            .iter()
            .enumerate()
            .map(|(m, v)| self.view_embedding(m, v.num_nodes(), &v.edges, &v.features, v.target))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            in_dim: self.in_dim,
            num_classes: self.num_classes,
            view_names: self.view_names.clone(),
            best_epoch: self.best_epoch,
            history: self.history.clone(),
            weights: self
                .weight_names()
                .into_iter()
                .zip(&self.weights)
                .map(|(name, w)| NamedTensor {
                    name,
                    shape: [w.rows(), w.cols()],
                    data: w.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint format {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        let mut model = TrainedPredictor::init(&ck.config, ck.in_dim, ck.num_classes, ck.view_names)?;
        let names = model.weight_names();
        if ck.weights.len() != names.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} tensors, expected {}",
                ck.weights.len(),
                names.len()
            )));
        }
        for ((slot, t), name) in model.weights.iter_mut().zip(ck.weights).zip(names) {
            if t.name != name || [slot.rows(), slot.cols()] != t.shape {
                return Err(Error::Schema(format!(
                    "checkpoint tensor {} {:?} does not match expected {name} {:?}",
                    t.name,
                    t.shape,
                    slot.shape()
                )));
            }
            *slot = Arc::new(Matrix::from_vec(t.shape[0], t.shape[1], t.data)?);
        }
        model.history = ck.history;
        model.best_epoch = ck.best_epoch;
        Ok(model)
    }
}

fn project_row(x: &[f64], w: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (k, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            for (o, wv) in out.iter_mut().zip(w.row(k)) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Softmax probabilities of a logit row.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

/// Cross-entropy of one logit row against `label`.
pub fn cross_entropy_row(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
