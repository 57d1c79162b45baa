//! Nearest-prototype classifier over externally supplied embeddings.
//!
//! Each cache key is represented by the normalized mean of its (normalized)
//! member embeddings. A query vector is scored by cosine similarity against
//! every centroid, the cosines are divided by a temperature and softmaxed,
//! and the argmax becomes the predicted key with its probability as
//! confidence.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CacheKey, PredictionRecord};

/// Tolerance on ‖centroid‖₂ = 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("no embedding for query {0:?}")]
    MissingEmbedding(String),
    #[error("at least two distinct keys are required, got {0}")]
    SingleClass(usize),
    #[error("vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector cannot be classified")]
    ZeroVector,
    #[error("non-finite component in vector for {0:?}")]
    NonFinite(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Precomputed sentence embeddings keyed by query id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self, ClassifierError> {
        if dim == 0 {
            return Err(ClassifierError::InvalidModel("embedding dimension must be positive".into()));
        }
        Ok(Self { dim, vectors: HashMap::new() })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<(), ClassifierError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(ClassifierError::DimensionMismatch { expected: self.dim, got: vector.len() });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(ClassifierError::NonFinite(id));
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Ids in sorted order.
    pub fn ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.vectors.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax of `scores / temperature`.
pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeModel {
    pub dim: usize,
    pub centroids: BTreeMap<CacheKey, Vec<f64>>,
    pub temperature: f64,
}

impl PrototypeModel {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.dim == 0 {
            return Err(ClassifierError::InvalidModel("dim must be positive".into()));
        }
        if self.centroids.len() < 2 {
            return Err(ClassifierError::SingleClass(self.centroids.len()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ClassifierError::InvalidModel(format!("temperature {} must be positive", self.temperature)));
        }
        for (key, c) in &self.centroids {
            if c.len() != self.dim {
                return Err(ClassifierError::DimensionMismatch { expected: self.dim, got: c.len() });
            }
            if (norm(c) - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(ClassifierError::InvalidModel(format!("centroid for {key} is not unit-norm")));
            }
        }
        Ok(())
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self, ClassifierError> {
        self.temperature = temperature;
        self.validate()?;
        Ok(self)
    }

    pub fn keys(&self) -> impl Iterator<Item = &CacheKey> {
        self.centroids.keys()
    }

    /// Raw cosine similarity against every centroid.
    pub fn cosine_scores(&self, vector: &[f64]) -> Result<BTreeMap<CacheKey, f64>, ClassifierError> {
        if vector.len() != self.dim {
            return Err(ClassifierError::DimensionMismatch { expected: self.dim, got: vector.len() });
        }
        let unit = normalized(vector).ok_or(ClassifierError::ZeroVector)?;
        Ok(self.centroids.iter().map(|(k, c)| (k.clone(), dot(&unit, c))).collect())
    }

    /// Softmax over `cos / T`; argmax ties go to the smallest canonical key.
    pub fn classify(&self, query_id: &str, vector: &[f64]) -> Result<PredictionRecord, ClassifierError> {
        let cos = self.cosine_scores(vector)?;
        let raw: Vec<f64> = cos.values().copied().collect();
        let probs = softmax(&raw, self.temperature);
        let scores: BTreeMap<CacheKey, f64> = cos.into_keys().zip(probs).collect();
        let (key, confidence) = crate::model::argmax_scores(&scores).expect("model has at least two keys");
        Ok(PredictionRecord {
            query_id: query_id.to_string(),
            predicted_key: key.clone(),
            confidence,
            class_scores: Some(scores.clone()),
        })
    }
}

/// Builds one unit-norm centroid per key from labeled examples.
pub fn fit_centroids(
    examples: &[(String, CacheKey)],
    table: &EmbeddingTable,
) -> Result<PrototypeModel, ClassifierError> {
    let mut sums: BTreeMap<CacheKey, Vec<f64>> = BTreeMap::new();
    for (id, key) in examples {
        let v = table.get(id).ok_or_else(|| ClassifierError::MissingEmbedding(id.clone()))?;
        let unit = normalized(v).ok_or(ClassifierError::ZeroVector)?;
        let acc = sums.entry(key.clone()).or_insert_with(|| vec![0.0; table.dim()]);
        acc.iter_mut().zip(&unit).for_each(|(a, u)| *a += u);
    }
    if sums.len() < 2 {
        return Err(ClassifierError::SingleClass(sums.len()));
    }
    let mut centroids = BTreeMap::new();
    for (key, sum) in sums {
        // antipodal members can cancel exactly
        let c =
            normalized(&sum).ok_or_else(|| ClassifierError::InvalidModel(format!("centroid for {key} vanishes")))?;
        centroids.insert(key, c);
    }
    Ok(PrototypeModel { dim: table.dim(), centroids, temperature: 1.0 })
}
