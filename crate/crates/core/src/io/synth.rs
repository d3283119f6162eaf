//! Planted-signal benchmark generator.
//!
//! Target nodes ("item") carry a class label. The first view (items sharing
//! an "author") is a planted-partition graph whose communities are the
//! classes; the second view (items sharing a "tag") is Erdős–Rényi noise, or
//! a second planted graph in the decoupled variant. Every view edge is
//! realized through its own connector node, so the induced item–author–item
//! view reproduces the sampled graph exactly. Optional clutter items have
//! random features and labels, sit outside every split and attach to random
//! items in both views.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, MetaPath, Relation, Schema, Splits};
use crate::rng::{self, Rng, Stream};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub name: String,
    /// Items before clutter is added.
    pub target_nodes: usize,
    pub classes: usize,
    pub feature_dim: usize,
    /// Expected degree of an item in the planted view.
    pub planted_degree: f64,
    /// Fraction of planted-view edges expected to join same-class items.
    pub planted_strength: f64,
    /// Edge probability of the noise view.
    pub noise_density: f64,
    /// Standard deviation of the per-class feature means.
    pub feature_signal: f64,
    /// Standard deviation of per-item feature noise.
    pub feature_noise: f64,
    /// Clutter items added, as a fraction of `target_nodes`.
    pub clutter_fraction: f64,
    /// Edges per clutter item in each view.
    pub clutter_degree: usize,
    /// Plant communities in both views with equal strength.
    pub decoupled: bool,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            name: "planted".into(),
            target_nodes: 300,
            classes: 3,
            feature_dim: 16,
            planted_degree: 6.0,
            planted_strength: 0.9,
            noise_density: 0.02,
            feature_signal: 0.25,
            feature_noise: 1.0,
            clutter_fraction: 0.0,
            clutter_degree: 3,
            decoupled: false,
            train_fraction: 0.2,
            val_fraction: 0.1,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

/// A generated graph with its meta-paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: HeteroGraph,
    pub meta_paths: Vec<MetaPath>,
}

impl SynthParams {
    /// Number of clutter items.
    pub fn clutter_count(&self) -> usize {
        (self.target_nodes as f64 * self.clutter_fraction).round() as usize
    }

    fn planted_probabilities(&self) -> Result<(f64, f64)> {
        let n = self.target_nodes as f64;
        let per_class = n / self.classes as f64;
        let p_in = self.planted_degree * self.planted_strength / (per_class - 1.0);
        let p_out = self.planted_degree * (1.0 - self.planted_strength) / (n - per_class);
        for (name, p) in [("within-class", p_in), ("between-class", p_out)] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} edge probability {p} is infeasible; lower planted_degree"
                )));
            }
        }
        Ok((p_in, p_out))
    }

    fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Parameter(m));
        if self.classes < 2 {
            return fail("at least two classes are required".into());
        }
        if self.target_nodes < 2 * self.classes {
            return fail(format!(
                "{} items cannot hold {} classes",
                self.target_nodes, self.classes
            ));
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.planted_strength) {
            return fail(format!("planted_strength {}", self.planted_strength));
        }
        if !(0.0..=1.0).contains(&self.noise_density) {
            return fail(format!("noise_density {}", self.noise_density));
        }
        if !(self.planted_degree >= 0.0) {
            return fail(format!("planted_degree {}", self.planted_degree));
        }
        if !(self.feature_signal >= 0.0 && self.feature_noise >= 0.0) {
            return fail("feature scales must be nonnegative".into());
        }
        if !(self.clutter_fraction >= 0.0 && self.clutter_fraction.is_finite()) {
            return fail(format!("clutter_fraction {}", self.clutter_fraction));
        }
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|&f| !(0.0..=1.0).contains(&f)) || fr.iter().sum::<f64>() > 1.0 + 1e-12 {
            return fail("split fractions must lie in [0, 1] and sum to at most 1".into());
        }
        self.planted_probabilities()?;
        Ok(())
    }
}

fn planted_edges(
    labels: &[usize],
    p_in: f64,
    p_out: f64,
    rng: &mut Rng,
) -> Vec<(usize, usize)> {
    let n = labels.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn random_edges(n: usize, p: f64, rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Generates the dataset; identical parameters give identical output.
pub fn synthesize(params: &SynthParams) -> Result<Dataset> {
    params.check()?;
    let (p_in, p_out) = params.planted_probabilities()?;
    let mut rng = rng::stream(params.seed, Stream::Synth, 0);
    let n = params.target_nodes;
    let c = params.classes;
    let d = params.feature_dim;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labels = vec![0; n];
    for (pos, &node) in order.iter().enumerate() {
        labels[node] = pos % c;
    }

    let signal = Normal::new(0.0, params.feature_signal).map_err(|e| Error::Parameter(e.to_string()))?;
    let noise = Normal::new(0.0, params.feature_noise).map_err(|e| Error::Parameter(e.to_string()))?;
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| signal.sample(&mut rng)).collect())
        .collect();
    let clutter = params.clutter_count();
    let total = n + clutter;
    let mut features = Matrix::zeros(total, d);
    for (i, &y) in labels.iter().enumerate() {
        for (k, x) in features.row_mut(i).iter_mut().enumerate() {
            *x = means[y][k] + noise.sample(&mut rng);
        }
    }
    let spread = Normal::new(
        0.0,
        (params.feature_signal.powi(2) + params.feature_noise.powi(2)).sqrt(),
    )
    .map_err(|e| Error::Parameter(e.to_string()))?;
    for i in n..total {
        for x in features.row_mut(i) {
            *x = spread.sample(&mut rng);
        }
    }

    let mut author_view = planted_edges(&labels, p_in, p_out, &mut rng);
    let mut tag_view = if params.decoupled {
        planted_edges(&labels, p_in, p_out, &mut rng)
    } else {
        random_edges(n, params.noise_density, &mut rng)
    };

    let mut all_labels = labels.clone();
    for i in n..total {
        all_labels.push(rng.random_range(0..c));
        for view in [&mut author_view, &mut tag_view] {
            let mut picked = Vec::with_capacity(params.clutter_degree);
            while picked.len() < params.clutter_degree.min(n) {
                let u = rng.random_range(0..n);
                if !picked.contains(&u) {
                    picked.push(u);
                }
            }
            picked.sort_unstable();
            view.extend(picked.into_iter().map(|u| (u, i)));
        }
    }

    let connect = |view: &[(usize, usize)]| -> Vec<(usize, usize)> {
        let mut rel = Vec::with_capacity(2 * view.len());
        for (k, &(u, v)) in view.iter().enumerate() {
            rel.push((u, k));
            rel.push((v, k));
        }
        rel.sort_unstable();
        rel
    };
    let item_author = connect(&author_view);
    let item_tag = connect(&tag_view);

    let mut base: Vec<usize> = (0..n).collect();
    base.shuffle(&mut rng);
    let n_train = (params.train_fraction * n as f64).round() as usize;
    let n_val = (params.val_fraction * n as f64).round() as usize;
    let n_test = ((params.test_fraction * n as f64).round() as usize).min(n - n_train - n_val);
    let mut take = |k: usize| -> Vec<usize> {
        let mut s: Vec<usize> = base.drain(..k).collect();
        s.sort_unstable();
        s
    };
    let splits = Splits {
        train: take(n_train),
        val: take(n_val),
        test: take(n_test),
    };

    let schema = Schema {
        node_types: vec!["item".into(), "author".into(), "tag".into()],
        relations: vec![
            Relation {
                name: "item_author".into(),
                source: "item".into(),
                target: "author".into(),
            },
            Relation {
                name: "item_tag".into(),
                source: "item".into(),
                target: "tag".into(),
            },
        ],
    };
    let graph = HeteroGraph {
        schema,
        node_counts: vec![total, author_view.len(), tag_view.len()],
        edges: vec![item_author, item_tag],
        features: vec![
            features,
            Matrix::zeros(author_view.len(), 0),
            Matrix::zeros(tag_view.len(), 0),
        ],
        target_type: 0,
        num_classes: c,
        labels: all_labels,
        splits,
    };
    Ok(Dataset {
        name: params.name.clone(),
        graph,
        meta_paths: vec![
            MetaPath::parse(&["item_author", "~item_author"]),
            MetaPath::parse(&["item_tag", "~item_tag"]),
        ],
    })
}
