use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::synth::SynthParams;
use crate::diagnostics::ContributionSource;
use crate::error::{Error, Result};
use crate::explainers::ExplainerConfig;
use crate::faithfulness::EvalConfig;
use crate::predictors::{AttentionOverride, PredictorConfig};

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Dataset directory or its `schema.json`.
    Path(PathBuf),
    Synth(SynthParams),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synth(SynthParams::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Write the configured synthetic dataset to `<out>/dataset`.
    Synth,
    #[default]
    Train,
    Explain,
    Evaluate,
    Mpaea,
    Intervene,
    Retrain,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Train,
        Stage::Explain,
        Stage::Evaluate,
        Stage::Mpaea,
        Stage::Intervene,
        Stage::Retrain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Explain => "explain",
            Stage::Evaluate => "evaluate",
            Stage::Mpaea => "mpaea",
            Stage::Intervene => "intervene",
            Stage::Retrain => "retrain",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|s| s.as_str() == name)
            .ok_or_else(|| Error::Input(format!("unknown stage {name:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub contribution: ContributionSource,
    /// Fusion overrides for the intervention stage; empty means learned,
    /// one-hot on every view, then balanced.
    pub conditions: Vec<AttentionOverride>,
    /// Fractions of unlabelled target nodes removed in the retrain stage.
    pub removal_levels: Vec<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            contribution: ContributionSource::Grad,
            conditions: Vec::new(),
            removal_levels: (1..10).map(|k| f64::from(k) / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub predictor: PredictorConfig,
    pub explainers: Vec<ExplainerConfig>,
    pub eval: EvalConfig,
    pub diagnostics: DiagnosticsConfig,
    pub stage: Stage,
    /// Predictor and explainer seeds; for `mpaea` these are the runs.
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::default(),
            predictor: PredictorConfig::default(),
            explainers: vec![ExplainerConfig::Grad, ExplainerConfig::RandomNodeMask],
            eval: EvalConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            stage: Stage::default(),
            seeds: (0..5).collect(),
            out: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let c: RunConfig = serde_json::from_slice(bytes)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Parameter("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Parameter("seeds must be distinct".into()));
        }
        if self.explainers.is_empty() {
            return Err(Error::Parameter("at least one explainer is required".into()));
        }
        let mut names: Vec<&str> = self.explainers.iter().map(ExplainerConfig::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("each explainer may appear once".into()));
        }
        self.predictor.validate()?;
        self.eval.validate()?;
        if let Some(l) = self
            .diagnostics
            .removal_levels
            .iter()
            .find(|l| !(0.0..=1.0).contains(*l))
        {
            return Err(Error::Parameter(format!("removal level {l} outside [0, 1]")));
        }
        if self.stage == Stage::Synth && !matches!(self.dataset, DatasetSource::Synth(_)) {
            return Err(Error::Parameter("the synth stage needs a synth dataset source".into()));
        }
        Ok(())
    }
}
