//! Stage orchestration. Every artifact is written through [`write_atomic`],
//! so an interrupted run never leaves a partial report behind.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{DatasetSource, RunConfig, Stage};
use super::dataset::{load_dataset, save_dataset};
use super::synth::synthesize;
use super::{read_file, write_atomic, Dataset};
use crate::diagnostics::{
    alignment_run, intervention_experiment, mp_aea, retrain_experiment, summarize_interventions,
    summarize_retrain, AlignmentReport, AlignmentRun, ContributionSource,
};
use crate::error::{Error, Result};
use crate::explainers::{explain, ExplainContext, ExplainerConfig, Explanation};
use crate::faithfulness::{evaluate, FidelityReport};
use crate::hetgraph::{extract_local_views, TargetData};
use crate::predictors::{train, AttentionOverride, Checkpoint, PredictorConfig, TrainedPredictor};

/// What a stage produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub stage: Stage,
    /// Paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
    pub metadata: PathBuf,
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    stage: Stage,
    config_sha256: String,
    config: &'a RunConfig,
    seeds: &'a [u64],
    crate_version: &'static str,
    wall_time_seconds: f64,
    artifacts: &'a [PathBuf],
}

#[derive(Serialize)]
struct MpaeaDocument<'a> {
    dataset: &'a str,
    backbone: &'static str,
    source: ContributionSource,
    view_names: &'a [String],
    report: &'a AlignmentReport,
    runs: &'a [AlignmentRun],
}

#[derive(Serialize)]
struct MpaeaRow<'a> {
    metric: &'static str,
    dataset: &'a str,
    backbone: &'static str,
    view: &'a str,
    value: Option<f64>,
    p_value: Option<f64>,
    degenerate: bool,
}

#[derive(Serialize)]
struct InterventionRow<'a> {
    condition: &'a str,
    seed: u64,
    macro_f1: f64,
    micro_f1: f64,
}

#[derive(Serialize)]
struct RetrainRow {
    level: f64,
    seed: u64,
    removed: usize,
    condition: &'static str,
    macro_f1: f64,
    micro_f1: f64,
}

pub fn config_hash(config: &RunConfig) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(config)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(value)?;
    b.push(b'\n');
    Ok(b)
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Internal(format!("CSV serialization: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::Internal(format!("CSV flush: {e}")))
}

struct Runner<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    artifacts: Vec<PathBuf>,
}

impl Runner<'_> {
    fn put(&mut self, rel: impl Into<PathBuf>, bytes: &[u8]) -> Result<()> {
        let rel = rel.into();
        write_atomic(&self.out.join(&rel), bytes)?;
        self.artifacts.push(rel);
        Ok(())
    }

    fn dataset(&self) -> Result<Dataset> {
        match &self.config.dataset {
            DatasetSource::Path(p) => load_dataset(p),
            DatasetSource::Synth(p) => synthesize(p),
        }
    }

    fn predictor_config(&self, seed: u64) -> PredictorConfig {
        PredictorConfig {
            seed,
            ..self.config.predictor.clone()
        }
    }

    fn checkpoint_path(seed: u64) -> PathBuf {
        PathBuf::from("checkpoints").join(format!("seed_{seed}.json"))
    }

    fn explanation_path(name: &str, seed: u64) -> PathBuf {
        PathBuf::from("explanations")
            .join(name)
            .join(format!("seed_{seed}.json"))
    }

    /// Reuses a checkpoint trained with the same hyperparameters on views
    /// with the same names, otherwise trains and saves one.
    fn model(&mut self, data: &TargetData, seed: u64) -> Result<TrainedPredictor> {
        let cfg = self.predictor_config(seed);
        let rel = Self::checkpoint_path(seed);
        let path = self.out.join(&rel);
        if path.exists() {
            let ck: Checkpoint = serde_json::from_slice(&read_file(&path)?)?;
            let model = TrainedPredictor::from_checkpoint(ck)?;
            let names: Vec<&str> = data.views.iter().map(|v| v.name.as_str()).collect();
            if model.config == cfg
                && model.in_dim == data.features.cols()
                && model.view_names.iter().map(String::as_str).eq(names)
            {
                return Ok(model);
            }
        }
        let model = train(data, &cfg)?;
        self.put(rel, &json_bytes(&model.to_checkpoint())?)?;
        Ok(model)
    }

    fn train_stage(&mut self, data: &TargetData) -> Result<()> {
        for &seed in &self.config.seeds {
            let model = train(data, &self.predictor_config(seed))?;
            self.put(Self::checkpoint_path(seed), &json_bytes(&model.to_checkpoint())?)?;
        }
        Ok(())
    }

    fn explain_stage(&mut self, data: &TargetData) -> Result<()> {
        let hops = self.config.eval.hops;
        for &seed in &self.config.seeds.clone() {
            let model = self.model(data, seed)?;
            let ctx = ExplainContext::new(&model, data, &AttentionOverride::Learned)?;
            for ex in &self.config.explainers {
                let mut out = Vec::with_capacity(data.splits.test.len());
                for &v in &data.splits.test {
                    let local = extract_local_views(&data.views, &data.features, v, hops)?;
                    out.push(explain(&ctx, &local, ex, seed)?);
                }
                self.put(Self::explanation_path(ex.name(), seed), &json_bytes(&out)?)?;
            }
        }
        Ok(())
    }

    fn load_explanations(&self, ex: &ExplainerConfig, seed: u64) -> Result<Vec<Explanation>> {
        let path = self.out.join(Self::explanation_path(ex.name(), seed));
        if !path.exists() {
            return Err(Error::Evaluation(format!(
                "no {} explanations for seed {seed} at {}; run the explain stage first",
                ex.name(),
                path.display()
            )));
        }
        let list: Vec<Explanation> = serde_json::from_slice(&read_file(&path)?)?;
        let expected = serde_json::to_value(ex)?;
        if list.iter().any(|e| e.hyperparameters != expected || e.seed != seed) {
            return Err(Error::Evaluation(format!(
                "{} was produced with a different configuration; rerun the explain stage",
                path.display()
            )));
        }
        Ok(list)
    }

    fn evaluate_stage(&mut self, ds: &Dataset, data: &TargetData) -> Result<()> {
        let mut explanations = Vec::new();
        for ex in &self.config.explainers {
            for &seed in &self.config.seeds {
                explanations.push(self.load_explanations(ex, seed)?);
            }
        }
        let mut explanations = explanations.into_iter();
        let mut reports = Vec::with_capacity(self.config.explainers.len());
        let mut models = Vec::with_capacity(self.config.seeds.len());
        for &seed in &self.config.seeds.clone() {
            models.push(self.model(data, seed)?);
        }
        for ex in &self.config.explainers {
            let mut per_seed = Vec::with_capacity(models.len());
            for model in &models {
                let explanations = explanations.next().expect("loaded above");
                let ctx = ExplainContext::new(model, data, &AttentionOverride::Learned)?;
                let (scores, _) = evaluate(model, &ctx.attention, data, &explanations, &self.config.eval)?;
                per_seed.push(scores);
            }
            reports.push(FidelityReport::from_seeds(
                &ds.name,
                self.config.predictor.backbone,
                ex.name(),
                ex.mask_type(),
                self.config.seeds.clone(),
                per_seed,
            ));
        }
        self.put("reports/fidelity.csv", &csv_bytes(reports.iter().map(FidelityReport::csv_row))?)?;
        self.put("reports/fidelity.json", &json_bytes(&reports)?)?;
        Ok(())
    }

    fn mpaea_stage(&mut self, ds: &Dataset, data: &TargetData) -> Result<()> {
        let source = self.config.diagnostics.contribution;
        let runs = self
            .config
            .seeds
            .iter()
            .map(|&s| alignment_run(data, &self.config.predictor, s, source, self.config.eval.hops))
            .collect::<Result<Vec<_>>>()?;
        let names: Vec<String> = data.views.iter().map(|v| v.name.clone()).collect();
        let attention: Vec<Vec<f64>> = runs.iter().map(|r| r.attention.clone()).collect();
        let contribution: Vec<Vec<f64>> = runs.iter().map(|r| r.contribution.clone()).collect();
        let report = mp_aea(&names, &attention, &contribution)?;
        let backbone = self.config.predictor.backbone.as_str();
        let mut rows = Vec::new();
        for c in &report.channels {
            for (metric, corr) in [("kendall_tau", &c.kendall), ("spearman_rho", &c.spearman)] {
                rows.push(MpaeaRow {
                    metric,
                    dataset: &ds.name,
                    backbone,
                    view: &c.view,
                    value: corr.value,
                    p_value: corr.p_value,
                    degenerate: corr.degenerate,
                });
            }
        }
        let csv = csv_bytes(rows)?;
        self.put("reports/mpaea.csv", &csv)?;
        let doc = MpaeaDocument {
            dataset: &ds.name,
            backbone,
            source,
            view_names: &names,
            report: &report,
            runs: &runs,
        };
        self.put("reports/mpaea.json", &json_bytes(&doc)?)?;
        Ok(())
    }

    fn intervene_stage(&mut self, data: &TargetData) -> Result<()> {
        let mut conditions = self.config.diagnostics.conditions.clone();
        if conditions.is_empty() {
            conditions.push(AttentionOverride::Learned);
            conditions.extend((0..data.num_views()).map(AttentionOverride::OneHot));
            conditions.push(AttentionOverride::Balanced);
        }
        let records = intervention_experiment(data, &self.config.predictor, &self.config.seeds, &conditions)?;
        let rows = records.iter().map(|r| InterventionRow {
            condition: &r.condition,
            seed: r.seed,
            macro_f1: r.macro_f1,
            micro_f1: r.micro_f1,
        });
        let csv = csv_bytes(rows)?;
        self.put("reports/intervention.csv", &csv)?;
        self.put(
            "reports/intervention_summary.json",
            &json_bytes(&summarize_interventions(&records))?,
        )?;
        Ok(())
    }

    fn retrain_stage(&mut self, data: &TargetData) -> Result<()> {
        let records = retrain_experiment(
            data,
            &self.config.predictor,
            &self.config.seeds,
            &self.config.diagnostics.removal_levels,
            self.config.eval.hops,
        )?;
        let mut rows = Vec::with_capacity(3 * records.len());
        for r in &records {
            for (condition, macro_f1, micro_f1) in [
                ("original", r.original_macro_f1, r.original_micro_f1),
                ("after_masking", r.masked_macro_f1, r.masked_micro_f1),
                ("after_retrain", r.retrained_macro_f1, r.retrained_micro_f1),
            ] {
                rows.push(RetrainRow {
                    level: r.level,
                    seed: r.seed,
                    removed: r.removed,
                    condition,
                    macro_f1,
                    micro_f1,
                });
            }
        }
        self.put("reports/retrain.csv", &csv_bytes(rows)?)?;
        self.put("reports/retrain_summary.json", &json_bytes(&summarize_retrain(&records))?)?;
        Ok(())
    }
}

/// Runs the configured stage and writes its artifacts plus
/// `run_metadata_<stage>.json` under `config.out`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let mut r = Runner {
        config,
        out: &config.out,
        artifacts: Vec::new(),
    };
    let ds = r.dataset()?;
    if config.stage == Stage::Synth {
        for p in save_dataset(&ds, &config.out.join("dataset"))? {
            let rel = p.strip_prefix(&config.out).unwrap_or(&p).to_path_buf();
            r.artifacts.push(rel);
        }
    } else {
        let data = TargetData::from_graph(&ds.graph, &ds.meta_paths)?;
        match config.stage {
            Stage::Synth => unreachable!("handled above"),
            Stage::Train => r.train_stage(&data)?,
            Stage::Explain => r.explain_stage(&data)?,
            Stage::Evaluate => r.evaluate_stage(&ds, &data)?,
            Stage::Mpaea => r.mpaea_stage(&ds, &data)?,
            Stage::Intervene => r.intervene_stage(&data)?,
            Stage::Retrain => r.retrain_stage(&data)?,
        }
    }
    let artifacts = r.artifacts;
    let meta = RunMetadata {
        stage: config.stage,
        config_sha256: config_hash(config)?,
        config,
        seeds: &config.seeds,
        crate_version: env!("CARGO_PKG_VERSION"),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        artifacts: &artifacts,
    };
    let metadata = PathBuf::from(format!("run_metadata_{}.json", config.stage.as_str()));
    write_atomic(&config.out.join(&metadata), &json_bytes(&meta)?)?;
    Ok(RunOutcome {
        stage: config.stage,
        artifacts,
        metadata,
    })
}
