//! Shared fixtures and brute-force oracles for the integration tests. Every
//! oracle here goes through the public API only and recomputes its answer
//! from definitions.
#![allow(dead_code)]

use hetexplain::explainers::ExplainContext;
use hetexplain::hetgraph::{LocalView, LocalViewSet, MetaPath, MetaPathView, TargetData};
use hetexplain::hetgraph::Splits;
use hetexplain::io::synth::{synthesize, SynthParams};
use hetexplain::predictors::{probabilities, Backbone, PredictorConfig, TrainedPredictor};
use hetexplain::rng::{self, Stream};
use hetexplain::tensor::Matrix;
use rand::Rng as _;

/// Untrained model with random weights on a random graph of `n` nodes.
pub fn random_setup(backbone: Backbone, seed: u64, n: usize, d: usize) -> (TrainedPredictor, TargetData) {
    let mut rng = rng::stream(seed, Stream::Synth, 1234);
    let mut views = Vec::new();
    for (m, p) in [0.15, 0.1].into_iter().enumerate() {
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < p {
                    pairs.push((a, b));
                }
            }
        }
        views.push(MetaPathView::from_edges(format!("V{m}"), MetaPath::parse(&["r", "~r"]), n, pairs).unwrap());
    }
    let features = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap();
    let mut config = PredictorConfig::for_backbone(backbone);
    config.hidden_units = 5;
    config.attention_heads = 3;
    config.semantic_hidden = 7;
    config.seed = seed;
    let model = TrainedPredictor::init(&config, d, 3, vec!["V0".into(), "V1".into()]).unwrap();
    let labels = (0..n).map(|i| i % 3).collect();
    let third = n / 3;
    let data = TargetData {
        views,
        features: features.into(),
        labels,
        num_classes: 3,
        splits: Splits {
            train: (0..third).collect(),
            val: (third..2 * third).collect(),
            test: (2 * third..n).collect(),
        },
    };
    (model, data)
}

/// Hand-built local views around global node 0: view 0 is a star of
/// `leaves` identical leaves plus a dangling pair `(a, b)` hanging off leaf 1
/// with an edge between them; view 1 is a short path.
pub fn star_local(d: usize, leaves: usize) -> LocalViewSet {
    let n = leaves + 3;
    let mut feats = Matrix::zeros(n, d);
    for k in 0..d {
        feats.set(0, k, 0.3 - 0.1 * k as f64);
        for u in 1..=leaves {
            feats.set(u, k, 0.5 + 0.05 * k as f64);
        }
        feats.set(n - 2, k, -0.4 + 0.1 * k as f64);
        feats.set(n - 1, k, 0.2 * k as f64 - 0.3);
    }
    let (a, b) = (n - 2, n - 1);
    let mut edges: Vec<(usize, usize)> = (1..=leaves).map(|u| (0, u)).collect();
    edges.extend([(1, a), (1, b), (a, b)]);
    edges.sort_unstable();
    let path_feats = Matrix::from_vec(3, d, (0..3 * d).map(|i| ((i * 5) % 7) as f64 / 7.0 - 0.5).collect()).unwrap();
    LocalViewSet {
        target: 0,
        views: vec![
            LocalView {
                nodes: (0..n).collect(),
                edges,
                features: feats,
                target: 0,
            },
            LocalView {
                nodes: vec![0, 1, 2],
                edges: vec![(0, 1), (1, 2)],
                features: path_feats,
                target: 0,
            },
        ],
    }
}

/// Class probabilities of the local target through the public fast path.
pub fn local_probs(ctx: &ExplainContext<'_>, local: &LocalViewSet) -> Vec<f64> {
    probabilities(&ctx.model.local_logits(local, &ctx.attention).unwrap())
}

/// Exact Shapley values from the subset formula
/// `phi_i = sum_S |S|!(p-|S|-1)!/p! (v(S+i) - v(S))`.
pub fn brute_shapley(p: usize, v: &dyn Fn(&[bool]) -> f64) -> Vec<f64> {
    let mut fact = vec![1.0f64; p + 1];
    for i in 1..=p {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut values = vec![0.0; 1 << p];
    for (mask, val) in values.iter_mut().enumerate() {
        let z: Vec<bool> = (0..p).map(|i| mask >> i & 1 == 1).collect();
        *val = v(&z);
    }
    let mut phi = vec![0.0; p];
    for (i, out) in phi.iter_mut().enumerate() {
        for mask in 0..1usize << p {
            if mask >> i & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[p - s - 1] / fact[p];
            *out += w * (values[mask | 1 << i] - values[mask]);
        }
    }
    phi
}

/// Kendall tau-b by direct pair counting.
pub fn brute_kendall(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tx += 1;
            } else if dy == 0.0 {
                ty += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    let denom = (((c + d + tx) * (c + d + ty)) as f64).sqrt();
    (denom > 0.0).then(|| (c - d) as f64 / denom)
}

/// Average ranks (1-based) with ties sharing the mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let below = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Spearman rho as the Pearson correlation of average ranks.
pub fn brute_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn planted(params: SynthParams) -> TargetData {
    let ds = synthesize(&params).unwrap();
    TargetData::from_graph(&ds.graph, &ds.meta_paths).unwrap()
}
