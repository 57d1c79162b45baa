//! Stage functions and the seven-stage pipeline.
//!
//! `fingerprint → classify → simulate → metrics → sweep → calibrate → cost`.
//! Each stage writes one artifact; the run manifest lists them with SHA-256
//! digests. Outputs contain no timestamps or absolute paths, so a rerun with
//! the same inputs, config and seed is byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embed::HashingEmbedder;
use super::synthetic::{gen_synthetic, SyntheticSpec};
use super::{io, HarnessError, Result};
use crate::calibration::{self, CalibrationReport, ScoredExample, DEFAULT_BINS};
use crate::cascade::{
    simulate, CacheEntry, Cascade, CascadeConfig, OracleResolver, PlanTemplate, PredictionLogClassifier,
    RetrainingPool, SimulationOutput, StubResolver,
};
use crate::classifier::{fit_centroids, EmbeddingTable, PrototypeModel};
use crate::cost::{parse_range, CostConfig, ScalingRow, ScenarioResult};
use crate::fingerprint::{FingerprintRecord, Fingerprinter, Lexicons};
use crate::metrics::{self, KeyQualityReport};
use crate::model::{CacheKey, PredictionRecord, Query};
use crate::risk::{
    risk_coverage_sweep, select_threshold, BoundSpec, BoundVariant, CalibrationSet, CurvePoint, ThresholdCertificate,
};

pub const STAGES: [&str; 7] = ["fingerprint", "classify", "simulate", "metrics", "sweep", "calibrate", "cost"];
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Key used by the fallback deep resolver for queries without a usable label.
pub fn fallback_key() -> CacheKey {
    CacheKey::new("escalate", "agent").expect("valid key")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Inputs {
    pub dataset: Option<PathBuf>,
    /// JSONL embeddings; when absent the hashing embedder is used.
    pub embeddings: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub plans: Option<PathBuf>,
    pub lexicons: Option<PathBuf>,
    pub embedding_dim: usize,
}

impl Default for Inputs {
    fn default() -> Self {
        Self { dataset: None, embeddings: None, model: None, plans: None, lexicons: None, embedding_dim: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskSettings {
    pub alpha: f64,
    pub delta: f64,
    pub grid_size: usize,
}

impl Default for RiskSettings {
    fn default() -> Self {
        Self { alpha: 0.10, delta: 0.10, grid_size: crate::risk::DEFAULT_GRID_SIZE }
    }
}

impl RiskSettings {
    /// `grid_size` points `0, 1/grid_size, …`, matching the default grid at 100.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.grid_size).map(|i| i as f64 / self.grid_size as f64).collect()
    }

    pub fn spec(&self, variant: BoundVariant) -> BoundSpec {
        BoundSpec { variant, alpha: self.alpha, delta: self.delta, grid: self.grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostSettings {
    pub config: Option<PathBuf>,
    pub requests_per_day: u64,
    pub sensitivity: String,
    pub scaling: Vec<u64>,
}

impl Default for CostSettings {
    fn default() -> Self {
        Self {
            config: None,
            requests_per_day: 50,
            sensitivity: "0.5:1.0:0.05".into(),
            scaling: vec![50, 200, 1_000, 10_000, 100_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub inputs: Inputs,
    pub synthetic: Option<SyntheticSpec>,
    pub cascade: CascadeConfig,
    pub beta: f64,
    pub bins: usize,
    pub risk: RiskSettings,
    pub cost: CostSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            inputs: Inputs::default(),
            synthetic: None,
            cascade: CascadeConfig::default(),
            beta: 1.0,
            bins: DEFAULT_BINS,
            risk: RiskSettings::default(),
            cost: CostSettings::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative input paths resolve against `base`.
    pub fn from_toml_str(s: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(s).map_err(|e| HarnessError::Invalid(format!("pipeline config: {e}")))?;
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut().filter(|p| p.is_relative()) {
                *path = base.join(&*path);
            }
        };
        resolve(&mut cfg.inputs.dataset);
        resolve(&mut cfg.inputs.embeddings);
        resolve(&mut cfg.inputs.model);
        resolve(&mut cfg.inputs.plans);
        resolve(&mut cfg.inputs.lexicons);
        resolve(&mut cfg.cost.config);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn fingerprinter(&self) -> Result<Fingerprinter> {
        Ok(Fingerprinter::new(match &self.inputs.lexicons {
            Some(dir) => Lexicons::load(dir)?,
            None => Lexicons::builtin(),
        }))
    }

    pub fn cost_config(&self) -> Result<CostConfig> {
        Ok(match &self.cost.config {
            Some(p) => CostConfig::load(p)?,
            None => CostConfig::default(),
        })
    }
}

pub fn fingerprint_records(f: &Fingerprinter, queries: &[Query]) -> Result<Vec<FingerprintRecord>> {
    queries.iter().map(|q| Ok(f.record(q)?)).collect()
}

pub fn classify_all(
    model: &PrototypeModel,
    table: &EmbeddingTable,
    queries: &[Query],
) -> Result<Vec<PredictionRecord>> {
    model.validate()?;
    queries
        .iter()
        .map(|q| {
            let v =
                table.get(&q.id).ok_or_else(|| crate::classifier::ClassifierError::MissingEmbedding(q.id.clone()))?;
            Ok(model.classify(&q.id, v)?)
        })
        .collect()
}

/// Fits centroids on the labeled queries accepted by `train`, then a temperature on the same queries.
pub fn train_prototype(
    queries: &[Query],
    table: &EmbeddingTable,
    train: impl Fn(&Query) -> bool,
) -> Result<PrototypeModel> {
    let labeled: Vec<(String, CacheKey)> = queries
        .iter()
        .filter(|q| train(q))
        .filter_map(|q| Some((q.id.clone(), q.true_intent.as_ref()?.as_key()?)))
        .collect();
    let model = fit_centroids(&labeled, table)?;
    let examples: Vec<ScoredExample> = labeled
        .iter()
        .map(|(id, key)| {
            let scores = model.cosine_scores(table.get(id).expect("embedding checked by fit"))?;
            Ok(ScoredExample { scores, truth: key.clone() })
        })
        .collect::<Result<_>>()?;
    let t = calibration::fit_temperature(&examples)?;
    Ok(model.with_temperature(t)?)
}

pub fn load_plans(path: Option<&Path>) -> Result<Vec<PlanTemplate>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let plans: Vec<PlanTemplate> = io::read_json(path)?;
    for p in &plans {
        p.validate()?;
    }
    Ok(plans)
}

/// Tier 2 replays `predictions`; tier 3 is the ground-truth oracle; tier 4 is a stub that escalates.
pub fn build_cascade(
    config: &CascadeConfig,
    fingerprinter: Fingerprinter,
    predictions: Vec<PredictionRecord>,
    plans: Vec<PlanTemplate>,
    pool: RetrainingPool,
) -> Result<Cascade> {
    let deep = StubResolver { plan: Some(PlanTemplate::canned(&fallback_key())), latency: std::time::Duration::ZERO };
    Ok(Cascade::new(config.clone(), fingerprinter)?
        .with_tier2(Box::new(PredictionLogClassifier::new(predictions)))
        .with_cheap_resolver(Box::new(OracleResolver::new(plans)))
        .with_deep_resolver(Box::new(deep))
        .with_pool(pool))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    #[serde(flatten)]
    pub output: SimulationOutput,
    pub cache: Vec<CacheEntry>,
    pub retraining_pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n_labeled: usize,
    /// Keys assigned by the cascade.
    pub cascade: KeyQualityReport,
    /// Keys predicted by the classifier alone.
    pub classifier: KeyQualityReport,
}

fn truth_by_id(dataset: &[Query]) -> BTreeMap<&str, String> {
    dataset.iter().filter_map(|q| Some((q.id.as_str(), q.true_intent.as_ref()?.to_string()))).collect()
}

/// Key-quality report over labeled queries, for any `(query_id, key)` assignment.
pub fn key_quality<'a>(
    dataset: &[Query],
    assignments: impl IntoIterator<Item = (&'a str, &'a CacheKey)>,
    beta: f64,
) -> Result<KeyQualityReport> {
    let truth = truth_by_id(dataset);
    let (t, k): (Vec<String>, Vec<String>) =
        assignments.into_iter().filter_map(|(id, key)| Some((truth.get(id)?.clone(), key.canonical_string()))).unzip();
    Ok(metrics::report(&t, &k, beta)?)
}

pub fn metrics_summary(
    dataset: &[Query],
    resolutions: &SimulationOutput,
    predictions: &[PredictionRecord],
    beta: f64,
) -> Result<MetricsSummary> {
    let cascade = key_quality(
        dataset,
        resolutions.resolutions.iter().filter_map(|r| Some((r.query_id.as_str(), r.key.as_ref()?))),
        beta,
    )?;
    let classifier = key_quality(dataset, predictions.iter().map(|p| (p.query_id.as_str(), &p.predicted_key)), beta)?;
    let n_labeled = dataset.iter().filter(|q| q.true_intent.is_some()).count();
    Ok(MetricsSummary { n_labeled, cascade, classifier })
}

pub fn sweep(outcomes: &[(f64, bool)], grid: &[f64]) -> Result<Vec<CurvePoint>> {
    Ok(risk_coverage_sweep(&CalibrationSet::new(outcomes)?, grid))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    pub before: CalibrationReport,
    pub after: CalibrationReport,
    /// Certificates for every bound variant on the unscaled confidences.
    pub risk_certificates: Vec<ThresholdCertificate>,
}

pub fn calibration_summary(
    scored: &[ScoredExample],
    outcomes: &[(f64, bool)],
    bins: usize,
    risk: &RiskSettings,
) -> Result<CalibrationSummary> {
    let (before, after) = calibration::temperature_scale(scored, scored, bins)?;
    let temperature = after.fitted_temperature.expect("set by temperature_scale");
    let cal = CalibrationSet::new(outcomes)?;
    let risk_certificates =
        BoundVariant::ALL.into_iter().map(|v| Ok(select_threshold(&cal, &risk.spec(v))?)).collect::<Result<_>>()?;
    Ok(CalibrationSummary {
        temperature,
        nll_before: calibration::nll(scored, 1.0),
        nll_after: calibration::nll(scored, temperature),
        before,
        after,
        risk_certificates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub requests_per_day: u64,
    pub strategies: Vec<ScenarioResult>,
    pub sensitivity: Vec<ScenarioResult>,
    pub scaling: Vec<ScalingRow>,
    /// The sensitivity strategy at the simulated local share, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<ScenarioResult>,
}

pub fn cost_summary(cfg: &CostConfig, settings: &CostSettings, observed_local: Option<f64>) -> Result<CostSummary> {
    let grid = parse_range(&settings.sensitivity)?;
    let rpd = settings.requests_per_day;
    let observed = match observed_local {
        Some(l) => cfg.sensitivity(&[l], rpd)?.pop(),
        None => None,
    };
    Ok(CostSummary {
        requests_per_day: rpd,
        strategies: cfg.compare(rpd)?,
        sensitivity: cfg.sensitivity(&grid, rpd)?,
        scaling: cfg.scaling_table(&settings.scaling)?,
        observed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub stage: String,
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config_sha256: String,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

struct Loaded {
    dataset: Vec<Query>,
    embeddings: Option<EmbeddingTable>,
    model: Option<PrototypeModel>,
    plans: Vec<PlanTemplate>,
}

fn load_inputs(cfg: &PipelineConfig, fingerprinter: &Fingerprinter) -> Result<Loaded> {
    if let Some(spec) = &cfg.synthetic {
        let data = gen_synthetic(&SyntheticSpec { seed: cfg.seed, ..spec.clone() })?;
        return Ok(Loaded {
            dataset: data.dataset,
            embeddings: Some(data.embeddings),
            model: Some(data.model),
            plans: data.plans,
        });
    }
    let path = cfg
        .inputs
        .dataset
        .as_ref()
        .ok_or_else(|| HarnessError::Invalid("inputs.dataset is required without [synthetic]".into()))?;
    let dataset = io::read_dataset(path)?;
    let embeddings = match &cfg.inputs.embeddings {
        Some(p) => io::read_embeddings(p)?,
        None => HashingEmbedder { dim: cfg.inputs.embedding_dim }.embed_all(fingerprinter, &dataset)?,
    };
    Ok(Loaded { dataset, embeddings: Some(embeddings), model: None, plans: load_plans(cfg.inputs.plans.as_deref())? })
}

/// Runs all seven stages into `out_dir` and writes the run manifest.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let fingerprinter = cfg.fingerprinter().map_err(|e| e.in_stage("fingerprint"))?;
    let loaded = load_inputs(cfg, &fingerprinter).map_err(|e| e.in_stage("fingerprint"))?;
    let dataset = &loaded.dataset;
    let mut files: Vec<(&'static str, &'static str)> = Vec::new();
    let out = |name: &str| out_dir.join(name);

    let stage = "fingerprint";
    let records = fingerprint_records(&fingerprinter, dataset).map_err(|e| e.in_stage(stage))?;
    io::write_jsonl(&out("fingerprints.jsonl"), &records).map_err(|e| e.in_stage(stage))?;
    files.push((stage, "fingerprints.jsonl"));

    let stage = "classify";
    let predictions = (|| {
        let model = match (&loaded.model, &cfg.inputs.model) {
            (Some(m), _) => m.clone(),
            (None, Some(p)) => io::read_model(p)?,
            (None, None) => return Err(HarnessError::Invalid("inputs.model is required".into())),
        };
        let table = loaded.embeddings.as_ref().expect("embeddings loaded");
        classify_all(&model, table, dataset)
    })()
    .map_err(|e| e.in_stage(stage))?;
    io::write_jsonl(&out("predictions.jsonl"), &predictions).map_err(|e| e.in_stage(stage))?;
    files.push((stage, "predictions.jsonl"));

    let stage = "simulate";
    let report = (|| {
        let cascade = build_cascade(
            &cfg.cascade,
            fingerprinter.clone(),
            predictions.clone(),
            loaded.plans.clone(),
            RetrainingPool::in_memory(),
        )?;
        let output = simulate(&cascade, dataset)?;
        Ok::<_, HarnessError>(SimulationReport {
            output,
            cache: cascade.cache_snapshot().entries(),
            retraining_pool_size: cascade.pool().len(),
        })
    })()
    .map_err(|e| e.in_stage(stage))?;
    io::write_json(&out("simulation.json"), &report).map_err(|e| e.in_stage(stage))?;
    files.push((stage, "simulation.json"));

    let stage = "metrics";
    let summary = metrics_summary(dataset, &report.output, &predictions, cfg.beta).map_err(|e| e.in_stage(stage))?;
    io::write_json(&out("metrics.json"), &summary).map_err(|e| e.in_stage(stage))?;
    files.push((stage, "metrics.json"));

    let stage = "sweep";
    let outcomes = io::labeled_outcomes(dataset, &predictions).map_err(|e| e.in_stage(stage))?;
    let curve = sweep(&outcomes, &cfg.risk.grid()).map_err(|e| e.in_stage(stage))?;
    io::write_csv(&out("sweep.csv"), &curve).map_err(|e| e.in_stage(stage))?;
    files.push((stage, "sweep.csv"));

    let stage = "calibrate";
    let cal = io::scored_examples(dataset, &predictions)
        .and_then(|scored| calibration_summary(&scored, &outcomes, cfg.bins, &cfg.risk))
        .map_err(|e| e.in_stage(stage))?;
    io::write_json(&out("calibration.json"), &cal).map_err(|e| e.in_stage(stage))?;
    files.push((stage, "calibration.json"));

    let stage = "cost";
    let cost = cfg
        .cost_config()
        .and_then(|c| cost_summary(&c, &cfg.cost, Some(report.output.stats.coverage)))
        .map_err(|e| e.in_stage(stage))?;
    io::write_json(&out("cost.json"), &cost).map_err(|e| e.in_stage(stage))?;
    files.push((stage, "cost.json"));

    let artifacts = files
        .into_iter()
        .map(|(stage, file)| {
            let (sha256, bytes) = sha256_file(&out(file))?;
            Ok(ArtifactEntry { stage: stage.into(), file: file.into(), sha256, bytes })
        })
        .collect::<Result<Vec<_>>>()?;
    let config_text = toml::to_string(cfg).map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let manifest =
        RunManifest { seed: cfg.seed, config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())), artifacts };
    io::write_json(&out(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
