//! Deterministic feature-hashing sentence embedder.
//!
//! Stands in for a neural encoder in fixtures and demos. The query is
//! templatized first, so entity values do not move the vector; each unigram
//! and adjacent bigram is hashed with FNV-1a to a signed coordinate.

use serde::{Deserialize, Serialize};

use super::Result;
use crate::classifier::EmbeddingTable;
use crate::fingerprint::{fnv1a64, Fingerprinter};
use crate::model::Query;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl HashingEmbedder {
    pub fn embed(&self, fingerprinter: &Fingerprinter, text: &str) -> Result<Vec<f64>> {
        let template = fingerprinter.template(text)?;
        let tokens: Vec<&str> = template
            .text
            .split_whitespace()
            .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric() && c != '<' && c != '>' && c != '_'))
            .filter(|t| !t.is_empty())
            .collect();
        let mut v = vec![0.0; self.dim];
        let mut add = |feature: &str, weight: f64| {
            let h = fnv1a64(feature.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign * weight;
        };
        for t in &tokens {
            add(t, 1.0);
        }
        for w in tokens.windows(2) {
            add(&format!("{} {}", w[0], w[1]), 0.5);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            // an all-cancelling text still needs a usable direction
            v[0] = 1.0;
        }
        Ok(v)
    }

    pub fn embed_all(&self, fingerprinter: &Fingerprinter, queries: &[Query]) -> Result<EmbeddingTable> {
        let mut table = EmbeddingTable::new(self.dim)?;
        for q in queries {
            table.insert(q.id.clone(), self.embed(fingerprinter, &q.text)?)?;
        }
        Ok(table)
    }
}
