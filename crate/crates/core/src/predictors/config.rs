use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backbone {
    /// Multi-head graph attention per view.
    #[serde(rename = "HAN")]
    Han,
    /// Symmetric-normalized graph convolution per view.
    #[serde(rename = "HAN-GCN")]
    HanGcn,
}

impl Backbone {
    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::Han => "HAN",
            Backbone::HanGcn => "HAN-GCN",
        }
    }
}

/// Initialisation of the semantic-attention projection and query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SemanticInit {
    Glorot,
    /// Glorot draws multiplied by `scale`; small scales start the attention
    /// scores collapsed onto each other (near-uniform attention).
    Scaled { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub backbone: Backbone,
    pub hidden_units: usize,
    /// Attention heads; ignored by the GCN backbone.
    pub attention_heads: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub semantic_hidden: usize,
    pub semantic_init: SemanticInit,
    pub leaky_relu_slope: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig::han()
    }
}

impl PredictorConfig {
    pub fn han() -> Self {
        PredictorConfig {
            backbone: Backbone::Han,
            hidden_units: 8,
            attention_heads: 8,
            dropout: 0.6,
            learning_rate: 0.01,
            weight_decay: 0.001,
            epochs: 200,
            patience: 100,
            semantic_hidden: 128,
            semantic_init: SemanticInit::Glorot,
            leaky_relu_slope: 0.2,
            seed: 0,
        }
    }

    pub fn han_gcn() -> Self {
        PredictorConfig {
            backbone: Backbone::HanGcn,
            hidden_units: 64,
            attention_heads: 1,
            ..PredictorConfig::han()
        }
    }

    pub fn for_backbone(backbone: Backbone) -> Self {
        match backbone {
            Backbone::Han => PredictorConfig::han(),
            Backbone::HanGcn => PredictorConfig::han_gcn(),
        }
    }

    /// Heads actually used by the encoder.
    pub fn heads(&self) -> usize {
        match self.backbone {
            Backbone::Han => self.attention_heads,
            Backbone::HanGcn => 1,
        }
    }

    /// Width of each per-view embedding.
    pub fn embedding_dim(&self) -> usize {
        self.heads() * self.hidden_units
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Parameter(m));
        if self.hidden_units == 0 {
            return fail("hidden_units must be positive".into());
        }
        if self.backbone == Backbone::Han && self.attention_heads == 0 {
            return fail("attention_heads must be positive".into());
        }
        if self.semantic_hidden == 0 {
            return fail("semantic_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay {}", self.weight_decay));
        }
        if self.patience > self.epochs {
            return fail(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            ));
        }
        if let SemanticInit::Scaled { scale } = self.semantic_init {
            if !scale.is_finite() {
                return fail(format!("semantic init scale {scale}"));
            }
        }
        Ok(())
    }
}

/// How the fusion weights over views are chosen at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum AttentionOverride {
    Learned,
    OneHot(usize),
    Balanced,
    Explicit(Vec<f64>),
}

impl AttentionOverride {
    /// Fixed fusion weights, or `None` for the learned attention.
    pub fn fixed(&self, num_views: usize) -> Result<Option<Vec<f64>>> {
        match self {
            AttentionOverride::Learned => Ok(None),
            AttentionOverride::OneHot(m) => {
                if *m >= num_views {
                    return Err(Error::dim(
                        "attention override",
                        format!("one-hot index {m} for {num_views} views"),
                    ));
                }
                let mut b = vec![0.0; num_views];
                b[*m] = 1.0;
                Ok(Some(b))
            }
            AttentionOverride::Balanced => Ok(Some(vec![1.0 / num_views as f64; num_views])),
            AttentionOverride::Explicit(b) => {
                if b.len() != num_views {
                    return Err(Error::dim(
                        "attention override",
                        format!("vector of length {} for {num_views} views", b.len()),
                    ));
                }
                if b.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(Error::Parameter("attention weights must be nonnegative".into()));
                }
                let s: f64 = b.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Parameter(format!(
                        "attention weights sum to {s}, expected 1"
                    )));
                }
                Ok(Some(b.clone()))
            }
        }
    }

    /// Resolves against a learned attention vector.
    pub fn resolve(&self, learned: &[f64]) -> Result<Vec<f64>> {
        Ok(self.fixed(learned.len())?.unwrap_or_else(|| learned.to_vec()))
    }

    pub fn label(&self) -> String {
        match self {
            AttentionOverride::Learned => "learned".into(),
            AttentionOverride::OneHot(m) => format!("one_hot_{m}"),
            AttentionOverride::Balanced => "balanced".into(),
            AttentionOverride::Explicit(b) => {
                let parts: Vec<String> = b.iter().map(|x| format!("{x}")).collect();
                format!("explicit_{}", parts.join("_"))
            }
        }
    }
}
