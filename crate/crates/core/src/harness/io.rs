//! JSONL, JSON and CSV readers and writers.
//!
//! Embedding files start with a header line `{"dim": N}` followed by one
//! `{"id": ..., "vector": [...]}` object per line.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::calibration::ScoredExample;
use crate::classifier::{EmbeddingTable, PrototypeModel};
use crate::model::{CacheKey, PredictionRecord, Query};

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| HarnessError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(|e| HarnessError::io(path, e))
}

/// Non-blank lines with 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<T: DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| HarnessError::Parse { path: path.into(), line, message: e.to_string() })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    lines(path)?.into_iter().map(|(n, l)| parse_line(path, n, &l)).collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).expect("value serializes");
        w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).expect("value serializes");
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| HarnessError::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let w = create(path)?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(|e| HarnessError::Invalid(format!("{}: {e}", path.display())))?;
    }
    csv.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> String {
    let mut csv = csv::Writer::from_writer(Vec::new());
    for r in rows {
        csv.serialize(r).expect("row serializes");
    }
    String::from_utf8(csv.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

/// Reads and validates a dataset; ids must be unique.
pub fn read_dataset(path: &Path) -> Result<Vec<Query>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, l) in lines(path)? {
        let q: Query = parse_line(path, n, &l)?;
        q.validate().map_err(|e| HarnessError::Parse { path: path.into(), line: n, message: e.to_string() })?;
        if !seen.insert(q.id.clone()) {
            return Err(HarnessError::Parse {
                path: path.into(),
                line: n,
                message: format!("duplicate id {:?}", q.id),
            });
        }
        out.push(q);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (n, l) in lines(path)? {
        let r: PredictionRecord = parse_line(path, n, &l)?;
        r.validate().map_err(|e| HarnessError::Parse { path: path.into(), line: n, message: e.to_string() })?;
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingHeader {
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let mut rows = lines(path)?.into_iter();
    let (n, header) = rows.next().ok_or_else(|| HarnessError::Parse {
        path: path.into(),
        line: 1,
        message: "missing {\"dim\": N} header".into(),
    })?;
    let header: EmbeddingHeader = parse_line(path, n, &header)?;
    let mut table = EmbeddingTable::new(header.dim).map_err(|e| HarnessError::Parse {
        path: path.into(),
        line: n,
        message: e.to_string(),
    })?;
    for (n, l) in rows {
        let row: EmbeddingRow = parse_line(path, n, &l)?;
        table.insert(row.id, row.vector).map_err(|e| HarnessError::Parse {
            path: path.into(),
            line: n,
            message: e.to_string(),
        })?;
    }
    Ok(table)
}

/// Writes rows in sorted id order.
pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut w = create(path)?;
    let io_err = |e| HarnessError::io(path, e);
    serde_json::to_writer(&mut w, &EmbeddingHeader { dim: table.dim() }).expect("header serializes");
    w.write_all(b"\n").map_err(io_err)?;
    for id in table.ids() {
        let row = EmbeddingRow { id: id.to_string(), vector: table.get(id).expect("listed id").to_vec() };
        serde_json::to_writer(&mut w, &row).expect("row serializes");
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_model(path: &Path) -> Result<PrototypeModel> {
    let m: PrototypeModel = read_json(path)?;
    m.validate()?;
    Ok(m)
}

/// `(confidence, correct)` for every prediction whose query has a key-shaped label.
pub fn labeled_outcomes(dataset: &[Query], predictions: &[PredictionRecord]) -> Result<Vec<(f64, bool)>> {
    let truth = truth_index(dataset);
    let mut out = Vec::new();
    for p in predictions {
        if let Some(t) = truth.get(p.query_id.as_str()) {
            out.push((p.confidence, t == &p.predicted_key));
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Invalid("no prediction matches a labeled query".into()));
    }
    Ok(out)
}

/// Log-probabilities as logits, paired with the true key, for predictions that carry scores.
pub fn scored_examples(dataset: &[Query], predictions: &[PredictionRecord]) -> Result<Vec<ScoredExample>> {
    let truth = truth_index(dataset);
    let mut out = Vec::new();
    for p in predictions {
        let (Some(t), Some(scores)) = (truth.get(p.query_id.as_str()), &p.class_scores) else {
            continue;
        };
        if !scores.contains_key(t) {
            continue;
        }
        let logits: BTreeMap<CacheKey, f64> =
            scores.iter().map(|(k, &s)| (k.clone(), s.max(f64::MIN_POSITIVE).ln())).collect();
        out.push(ScoredExample { scores: logits, truth: t.clone() });
    }
    if out.len() < 2 {
        return Err(HarnessError::Invalid("calibration needs at least two scored, labeled predictions".into()));
    }
    Ok(out)
}

fn truth_index(dataset: &[Query]) -> std::collections::HashMap<&str, CacheKey> {
    dataset.iter().filter_map(|q| Some((q.id.as_str(), q.true_intent.as_ref()?.as_key()?))).collect()
}
