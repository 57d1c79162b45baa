use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use canoncache::cascade::{simulate, RetrainingPool};
use canoncache::harness::embed::HashingEmbedder;
use canoncache::harness::pipeline::{
    build_cascade, calibration_summary, classify_all, cost_summary, fingerprint_records, key_quality, load_plans,
    run_pipeline, sweep, train_prototype, CostSettings, PipelineConfig, RiskSettings, SimulationReport,
};
use canoncache::harness::synthetic::{gen_synthetic, ConfidenceModel, SyntheticSpec};
use canoncache::harness::{exit, io, HarnessError, Result};
use canoncache::risk::{select_threshold, BoundVariant, CalibrationSet};
use canoncache::{CacheKey, Query};

#[derive(Parser)]
#[command(name = "canoncache", version, about = "Intent canonicalization for agent plan caching")]
struct Cli {
    /// Seed for every random draw
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Command-specific TOML config
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory; stdout when omitted and the command allows it
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Template fingerprints and parameters for each query
    Fingerprint(FingerprintArgs),
    /// Nearest-prototype predictions, or train a model with --train
    Classify(ClassifyArgs),
    /// Stream a dataset through the cascade
    Simulate(SimulateArgs),
    /// Key-quality metrics of a key assignment against true intents
    Metrics(MetricsArgs),
    /// Risk-coverage curve and a threshold certificate
    Sweep(SweepArgs),
    /// ECE before and after temperature scaling
    Calibrate(CalibrateArgs),
    /// Monthly cost per strategy
    Cost(CostArgs),
    /// Write a synthetic dataset, embeddings, prediction log and model
    GenSynthetic(GenArgs),
    /// Run all seven stages and write a run manifest
    Pipeline,
}

#[derive(Args)]
struct FingerprintArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lexicons: Option<PathBuf>,
}

#[derive(Args)]
struct EmbeddingArgs {
    /// JSONL embeddings; hashing embedder when omitted
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    embedding_dim: usize,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    emb: EmbeddingArgs,
    /// Fit a model on the labeled queries instead of predicting
    #[arg(long)]
    train: bool,
    /// With --train, only ids ending in this suffix are used
    #[arg(long)]
    train_suffix: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    plans: Option<PathBuf>,
    #[arg(long)]
    resolutions: Option<PathBuf>,
    /// Append tier-3 outcomes here
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Override the tier-2 threshold
    #[arg(long)]
    tau2: Option<f64>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSONL with `id` (or `query_id`) and `key` fields, e.g. predictions or resolutions
    #[arg(long)]
    keys: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

#[derive(Args)]
struct RiskArgs {
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long, default_value_t = 0.10)]
    delta: f64,
    #[arg(long, default_value_t = 100)]
    grid_size: usize,
}

impl RiskArgs {
    fn settings(&self) -> RiskSettings {
        RiskSettings { alpha: self.alpha, delta: self.delta, grid_size: self.grid_size }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[command(flatten)]
    risk: RiskArgs,
    /// hoeffding_union, eb_union, ltt_hoeffding or ltt_eb
    #[arg(long, default_value = "ltt_hoeffding")]
    variant: String,
    /// Write the certificate JSON here
    #[arg(long)]
    certificate: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value_t = 15)]
    bins: usize,
    #[command(flatten)]
    risk: RiskArgs,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value_t = 50)]
    req_per_day: u64,
    /// `start:end:step` local-share grid; emits CSV
    #[arg(long)]
    sensitivity: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n_classes: Option<usize>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    templates_per_class: Option<usize>,
    #[arg(long)]
    accuracy: Option<f64>,
    /// Overconfidence scale; calibrated when omitted
    #[arg(long)]
    overconfident: Option<f64>,
}

#[derive(Deserialize, Serialize)]
struct KeyRow {
    #[serde(alias = "query_id")]
    id: String,
    key: Option<CacheKey>,
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => io::write_json(p, value),
        None => {
            let s = serde_json::to_string_pretty(value).expect("value serializes");
            println!("{s}");
            Ok(())
        }
    }
}

fn emit_jsonl<T: Serialize>(out: Option<&Path>, items: &[T]) -> Result<()> {
    match out {
        Some(p) => io::write_jsonl(p, items),
        None => {
            let mut stdout = std::io::stdout().lock();
            for item in items {
                let line = serde_json::to_string(item).expect("value serializes");
                writeln!(stdout, "{line}").map_err(|e| HarnessError::io("<stdout>", e))?;
            }
            Ok(())
        }
    }
}

fn require<'a>(out: Option<&'a Path>, what: &str) -> Result<&'a Path> {
    out.ok_or_else(|| HarnessError::Invalid(format!("--out is required for {what}")))
}

fn embeddings(
    args: &EmbeddingArgs,
    cfg: &PipelineConfig,
    queries: &[Query],
) -> Result<canoncache::classifier::EmbeddingTable> {
    match &args.embeddings {
        Some(p) => io::read_embeddings(p),
        None => HashingEmbedder { dim: args.embedding_dim }.embed_all(&cfg.fingerprinter()?, queries),
    }
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Fingerprint(a) => {
            let mut cfg = pipeline_config(cli)?;
            if a.lexicons.is_some() {
                cfg.inputs.lexicons = a.lexicons.clone();
            }
            let records = fingerprint_records(&cfg.fingerprinter()?, &io::read_dataset(&a.input)?)?;
            emit_jsonl(out, &records)
        }
        Command::Classify(a) => {
            let cfg = pipeline_config(cli)?;
            let queries = io::read_dataset(&a.input)?;
            let table = embeddings(&a.emb, &cfg, &queries)?;
            if a.train {
                let suffix = a.train_suffix.as_deref().unwrap_or("");
                let model = train_prototype(&queries, &table, |q| q.id.ends_with(suffix))?;
                return emit_json(out, &model);
            }
            let model_path = a
                .model
                .as_ref()
                .or(cfg.inputs.model.as_ref())
                .ok_or_else(|| HarnessError::Invalid("--model is required".into()))?;
            emit_jsonl(out, &classify_all(&io::read_model(model_path)?, &table, &queries)?)
        }
        Command::Simulate(a) => {
            let mut cfg = pipeline_config(cli)?;
            if let Some(t) = a.tau2 {
                cfg.cascade.set_threshold(2, t);
            }
            let queries = io::read_dataset(&a.input)?;
            let predictions = io::read_predictions(&a.predictions)?;
            let plans = load_plans(a.plans.as_deref().or(cfg.inputs.plans.as_deref()))?;
            let pool = match &a.pool {
                Some(p) => RetrainingPool::with_file(p)?,
                None => RetrainingPool::in_memory(),
            };
            let cascade = build_cascade(&cfg.cascade, cfg.fingerprinter()?, predictions, plans, pool)?;
            let output = simulate(&cascade, &queries)?;
            if let Some(p) = &a.resolutions {
                io::write_jsonl(p, &output.resolutions)?;
            }
            let report = SimulationReport {
                cache: cascade.cache_snapshot().entries(),
                retraining_pool_size: cascade.pool().len(),
                output,
            };
            emit_json(out, &report.output.stats)?;
            if out.is_some() {
                eprintln!(
                    "coverage {:.4}, tiers {:?}, cache entries {}",
                    report.output.stats.coverage,
                    report.output.stats.per_tier,
                    report.cache.len()
                );
            }
            Ok(())
        }
        Command::Metrics(a) => {
            let queries = io::read_dataset(&a.input)?;
            let rows: Vec<KeyRow> = io::read_jsonl(&a.keys)?;
            let report =
                key_quality(&queries, rows.iter().filter_map(|r| Some((r.id.as_str(), r.key.as_ref()?))), a.beta)?;
            emit_json(out, &report)
        }
        Command::Sweep(a) => {
            let variant: BoundVariant = a.variant.parse()?;
            let queries = io::read_dataset(&a.input)?;
            let outcomes = io::labeled_outcomes(&queries, &io::read_predictions(&a.predictions)?)?;
            let settings = a.risk.settings();
            let curve = sweep(&outcomes, &settings.grid())?;
            match out {
                Some(p) => io::write_csv(p, &curve)?,
                None => print!("{}", io::csv_string(&curve)),
            }
            let cert = select_threshold(&CalibrationSet::new(&outcomes)?, &settings.spec(variant))?;
            match &a.certificate {
                Some(p) => io::write_json(p, &cert)?,
                None => eprintln!("{}", serde_json::to_string(&cert).expect("certificate serializes")),
            }
            if cert.is_feasible() {
                Ok(())
            } else {
                Err(HarnessError::Infeasible { alpha: cert.alpha, delta: cert.delta })
            }
        }
        Command::Calibrate(a) => {
            let queries = io::read_dataset(&a.input)?;
            let predictions = io::read_predictions(&a.predictions)?;
            let scored = io::scored_examples(&queries, &predictions)?;
            let outcomes = io::labeled_outcomes(&queries, &predictions)?;
            emit_json(out, &calibration_summary(&scored, &outcomes, a.bins, &a.risk.settings())?)
        }
        Command::Cost(a) => {
            let cfg = match &cli.config {
                Some(p) => canoncache::cost::CostConfig::load(p)?,
                None => canoncache::cost::CostConfig::default(),
            };
            if let Some(range) = &a.sensitivity {
                let rows = cfg.sensitivity(&canoncache::cost::parse_range(range)?, a.req_per_day)?;
                return match out {
                    Some(p) => io::write_csv(p, &rows),
                    None => {
                        print!("{}", io::csv_string(&rows));
                        Ok(())
                    }
                };
            }
            let settings = CostSettings { requests_per_day: a.req_per_day, ..CostSettings::default() };
            emit_json(out, &cost_summary(&cfg, &settings, None)?)
        }
        Command::GenSynthetic(a) => {
            let mut spec: SyntheticSpec = match &cli.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                    toml::from_str(&text).map_err(|e| HarnessError::InvalidSpec(e.to_string()))?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(v) = cli.seed {
                spec.seed = v;
            }
            if let Some(v) = a.n_classes {
                spec.n_classes = v;
            }
            if let Some(v) = a.n_per_class {
                spec.n_per_class = v;
            }
            if let Some(v) = a.templates_per_class {
                spec.templates_per_class = v;
            }
            if let Some(v) = a.accuracy {
                spec.classifier_accuracy = v;
            }
            if let Some(scale) = a.overconfident {
                spec.confidence_model = ConfidenceModel::Overconfident { scale };
            }
            let dir = require(out, "gen-synthetic")?;
            for p in gen_synthetic(&spec)?.write_to(dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Pipeline => {
            let cfg = pipeline_config(cli)?;
            let dir = require(out, "pipeline")?;
            let manifest = run_pipeline(&cfg, dir)?;
            for a in &manifest.artifacts {
                println!("{:<12} {} {}", a.stage, a.sha256, a.file);
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
    std::process::exit(exit::OK);
}
