//! Routes the mini corpus through the five-tier cascade and prints where each query landed.

use canoncache::cascade::{simulate, Cascade, CascadeConfig, OracleResolver, PredictionLogClassifier};
use canoncache::fingerprint::Fingerprinter;
use canoncache::harness::corpus::{mini_corpus, mini_plans};
use canoncache::harness::embed::HashingEmbedder;
use canoncache::harness::pipeline::classify_all;

const MODEL: &str = include_str!("../data/mini_model.json");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = mini_corpus();
    let f = Fingerprinter::default();
    let table = HashingEmbedder::default().embed_all(&f, &corpus)?;
    let predictions = classify_all(&serde_json::from_str(MODEL)?, &table, &corpus)?;

    let cascade = Cascade::new(CascadeConfig::default(), f)?
        .with_tier2(Box::new(PredictionLogClassifier::new(predictions)))
        .with_cheap_resolver(Box::new(OracleResolver::new(mini_plans())));
    let out = simulate(&cascade, &corpus)?;

    for r in out.resolutions.iter().take(12) {
        let plan = r.plan.as_ref().map(|p| p.steps.join("; ")).unwrap_or_default();
        println!("tier {} {:<14} {plan}", r.resolved_tier, r.query_id);
    }
    let s = &out.stats;
    println!("...\n\nper tier {:?}", s.per_tier);
    println!("coverage {:.3}, local safety {:.3}", s.coverage, s.safety.unwrap_or(f64::NAN));
    println!("cache holds {} plans", cascade.cache_snapshot().len());
    Ok(())
}
