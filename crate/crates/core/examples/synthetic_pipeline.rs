//! Generates a synthetic corpus and runs the full pipeline on it into a temporary directory.
//!
//! `cargo run --example synthetic_pipeline -- OUT_DIR` keeps the artifacts.

use canoncache::harness::pipeline::{run_pipeline, PipelineConfig};
use canoncache::harness::synthetic::SyntheticSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("canoncache-synthetic"));
    let cfg = PipelineConfig {
        seed: 11,
        synthetic: Some(SyntheticSpec {
            n_classes: 6,
            n_per_class: 200,
            classifier_accuracy: 0.9,
            ..Default::default()
        }),
        ..Default::default()
    };
    let manifest = run_pipeline(&cfg, &out)?;
    for a in &manifest.artifacts {
        println!("{:<12} {:>8} bytes  {}", a.stage, a.bytes, out.join(&a.file).display());
    }
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("simulation.json"))?)?;
    println!("\ntier counts {}", stats["stats"]["per_tier"]);
    Ok(())
}
