//! Every file the CLI emits validates against its schema in `docs/schemas`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_canoncache");

fn root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) {
    let o = Command::new(BIN).args(args).output().expect("binary runs");
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

type Reader = fn(&Path) -> Vec<Value>;

fn check(schema: &str, instances: &[Value], origin: &Path) {
    let path = root().join("docs/schemas").join(format!("{schema}.schema.json"));
    let schema_json: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema_json).unwrap_or_else(|e| panic!("{schema}: {e}"));
    assert!(!instances.is_empty(), "{} is empty", origin.display());
    for (i, v) in instances.iter().enumerate() {
        let errors: Vec<String> = validator.iter_errors(v).map(|e| format!("{} at {}", e, e.instance_path)).collect();
        assert!(errors.is_empty(), "{} item {i} vs {schema}: {errors:#?}", origin.display());
    }
}

fn json(path: &Path) -> Vec<Value> {
    vec![serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()]
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// CSV rows as objects; numeric cells become numbers and empty cells null.
fn csv_rows(path: &Path) -> Vec<Value> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            let obj = headers
                .iter()
                .zip(r.iter())
                .map(|(h, cell)| {
                    let v = if cell.is_empty() {
                        Value::Null
                    } else if let Ok(n) = cell.parse::<u64>() {
                        n.into()
                    } else if let Ok(x) = cell.parse::<f64>() {
                        x.into()
                    } else {
                        cell.into()
                    };
                    (h.to_string(), v)
                })
                .collect();
            Value::Object(obj)
        })
        .collect()
}

#[test]
fn pipeline_artifacts_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    run(&["--config", s(&root().join("data/mini_pipeline.toml")), "--out", s(out), "pipeline"]);
    let cases: [(&str, Reader, &str); 8] = [
        ("fingerprints.jsonl", jsonl, "fingerprint_record"),
        ("predictions.jsonl", jsonl, "prediction_record"),
        ("simulation.json", json, "simulation_report"),
        ("metrics.json", json, "metrics_summary"),
        ("sweep.csv", csv_rows, "curve_point"),
        ("calibration.json", json, "calibration_summary"),
        ("cost.json", json, "cost_summary"),
        ("run_manifest.json", json, "run_manifest"),
    ];
    for (file, read, schema) in cases {
        let p = out.join(file);
        check(schema, &read(&p), &p);
    }
}

#[test]
fn command_outputs_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| -> PathBuf { dir.path().join(name) };
    run(&["--out", s(&d("syn")), "gen-synthetic", "--n-classes", "5", "--n-per-class", "60", "--overconfident", "3"]);
    let syn = d("syn");
    check("query", &jsonl(&syn.join("dataset.jsonl")), &syn.join("dataset.jsonl"));
    check("embedding_line", &jsonl(&syn.join("embeddings.jsonl")), &syn.join("embeddings.jsonl"));
    check("prediction_record", &jsonl(&syn.join("predictions.jsonl")), &syn.join("predictions.jsonl"));
    check("prototype_model", &json(&syn.join("model.json")), &syn.join("model.json"));
    check("plan_templates", &json(&syn.join("plans.json")), &syn.join("plans.json"));

    let dataset = syn.join("dataset.jsonl");
    let preds = syn.join("predictions.jsonl");
    run(&[
        "--out",
        s(&d("stats.json")),
        "simulate",
        "--input",
        s(&dataset),
        "--predictions",
        s(&preds),
        "--plans",
        s(&syn.join("plans.json")),
        "--resolutions",
        s(&d("resolutions.jsonl")),
        "--pool",
        s(&d("pool.jsonl")),
    ]);
    check("traffic_stats", &json(&d("stats.json")), &d("stats.json"));
    check("resolution", &jsonl(&d("resolutions.jsonl")), &d("resolutions.jsonl"));
    check("pool_record", &jsonl(&d("pool.jsonl")), &d("pool.jsonl"));

    run(&["--out", s(&d("kq.json")), "metrics", "--input", s(&dataset), "--keys", s(&preds)]);
    check("key_quality_report", &json(&d("kq.json")), &d("kq.json"));

    run(&["--out", s(&d("cal.json")), "calibrate", "--input", s(&dataset), "--predictions", s(&preds)]);
    check("calibration_summary", &json(&d("cal.json")), &d("cal.json"));

    let o = Command::new(BIN)
        .args(["--out", s(&d("sweep.csv")), "sweep", "--input", s(&dataset), "--predictions", s(&preds)])
        .args(["--alpha", "0.3", "--certificate", s(&d("cert.json"))])
        .output()
        .unwrap();
    assert!(matches!(o.status.code(), Some(0 | 3)));
    check("curve_point", &csv_rows(&d("sweep.csv")), &d("sweep.csv"));
    check("threshold_certificate", &json(&d("cert.json")), &d("cert.json"));

    run(&["--out", s(&d("sens.csv")), "cost", "--req-per-day", "200", "--sensitivity", "0.5:1.0:0.05"]);
    check("scenario_result", &csv_rows(&d("sens.csv")), &d("sens.csv"));
    run(&["--out", s(&d("cost.json")), "cost", "--req-per-day", "200"]);
    check("cost_summary", &json(&d("cost.json")), &d("cost.json"));
}

#[test]
fn bundled_inputs_match_schemas() {
    let data = root().join("data");
    check("query", &jsonl(&data.join("mini_corpus.jsonl")), &data.join("mini_corpus.jsonl"));
    check("plan_templates", &json(&data.join("mini_plans.json")), &data.join("mini_plans.json"));
    check("prototype_model", &json(&data.join("mini_model.json")), &data.join("mini_model.json"));
}
