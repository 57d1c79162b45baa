//! Clustering-quality metrics for cache-key functions.
//!
//! A key function is judged like a clustering of queries against their true
//! intents. Homogeneity asks whether each key holds a single intent (cache
//! precision); completeness asks whether each intent lands on a single key
//! (cache consistency). All entropies are in bits.
//!
//! Degenerate conventions: `h = 1` when `H(Intent) = 0`, `c = 1` when
//! `H(Key) = 0`, `V = 0` when `h = c = 0`, and AMI is `0` whenever its
//! denominator vanishes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("truth has {truth} labels but keys has {keys}")]
    LengthMismatch { truth: usize, keys: usize },
    #[error("no items to evaluate")]
    EmptyInput,
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
}

/// Intent × key co-occurrence counts. Labels are sorted, rows and columns non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
    pub intent_labels: Vec<String>,
    pub key_labels: Vec<String>,
}

impl ContingencyTable {
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut cols = vec![0; self.key_labels.len()];
        for row in &self.counts {
            for (c, v) in cols.iter_mut().zip(row) {
                *c += v;
            }
        }
        cols
    }

    pub fn transpose(&self) -> ContingencyTable {
        let counts = (0..self.key_labels.len()).map(|j| self.counts.iter().map(|r| r[j]).collect()).collect();
        ContingencyTable {
            counts,
            n: self.n,
            intent_labels: self.key_labels.clone(),
            key_labels: self.intent_labels.clone(),
        }
    }
}

/// Counts co-occurrences of `truth[i]` and `keys[i]`.
pub fn build_contingency<T: AsRef<str>, K: AsRef<str>>(
    truth: &[T],
    keys: &[K],
) -> Result<ContingencyTable, MetricsError> {
    if truth.len() != keys.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), keys: keys.len() });
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut cells: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut intents: BTreeMap<&str, usize> = BTreeMap::new();
    let mut key_ix: BTreeMap<&str, usize> = BTreeMap::new();
    for (t, k) in truth.iter().zip(keys) {
        let (t, k) = (t.as_ref(), k.as_ref());
        *cells.entry((t, k)).or_default() += 1;
        intents.insert(t, 0);
        key_ix.insert(k, 0);
    }
    for (i, v) in intents.values_mut().enumerate() {
        *v = i;
    }
    for (j, v) in key_ix.values_mut().enumerate() {
        *v = j;
    }
    let mut counts = vec![vec![0u64; key_ix.len()]; intents.len()];
    for ((t, k), c) in cells {
        counts[intents[t]][key_ix[k]] = c;
    }
    Ok(ContingencyTable {
        counts,
        n: truth.len() as u64,
        intent_labels: intents.into_keys().map(str::to_string).collect(),
        key_labels: key_ix.into_keys().map(str::to_string).collect(),
    })
}

fn xlog2x_over(count: u64, n: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        let p = count as f64 / n;
        -p * p.log2()
    }
}

/// Entropy in bits of a count vector.
pub fn entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts.iter().map(|&c| xlog2x_over(c, n)).sum::<f64>().max(0.0)
}

pub fn intent_entropy(t: &ContingencyTable) -> f64 {
    entropy(&t.row_sums())
}

pub fn key_entropy(t: &ContingencyTable) -> f64 {
    entropy(&t.col_sums())
}

/// Mutual information in bits.
pub fn mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.n as f64;
    let rows = t.row_sums();
    let cols = t.col_sums();
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (rows[i] as f64 * cols[j] as f64)).log2();
            }
        }
    }
    mi.max(0.0)
}

/// H(Intent | Key) in bits.
pub fn conditional_intent_entropy(t: &ContingencyTable) -> f64 {
    (intent_entropy(t) - mutual_information(t)).max(0.0)
}

/// H(Key | Intent) in bits.
pub fn conditional_key_entropy(t: &ContingencyTable) -> f64 {
    (key_entropy(t) - mutual_information(t)).max(0.0)
}

/// `1 − H(Intent|Key) / H(Intent)`.
pub fn homogeneity(t: &ContingencyTable) -> f64 {
    let h_intent = intent_entropy(t);
    if h_intent == 0.0 {
        return 1.0;
    }
    (1.0 - conditional_intent_entropy(t) / h_intent).clamp(0.0, 1.0)
}

/// `1 − H(Key|Intent) / H(Key)`.
pub fn completeness(t: &ContingencyTable) -> f64 {
    let h_key = key_entropy(t);
    if h_key == 0.0 {
        return 1.0;
    }
    (1.0 - conditional_key_entropy(t) / h_key).clamp(0.0, 1.0)
}

/// Weighted harmonic mean `(1+β²)hc / (β²h + c)`.
pub fn v_measure(h: f64, c: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * h + c;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * h * c / denom
    }
}

/// ln k! for k in 0..=n.
fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Expected mutual information (bits) between two labelings with the given
/// marginals when one is a uniformly random permutation of the other.
pub fn expected_mutual_information(rows: &[u64], cols: &[u64]) -> f64 {
    let n: u64 = rows.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let lf = ln_factorials(n);
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in rows {
        for &b in cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            // P(nij) = a! b! (n-a)! (n-b)! / (n! nij! (a-nij)! (b-nij)! (n-a-b+nij)!)
            let fixed = lf[a as usize] + lf[b as usize] + lf[(n - a) as usize] + lf[(n - b) as usize] - lf[n as usize];
            for nij in lo..=hi {
                let ln_p = fixed
                    - lf[nij as usize]
                    - lf[(a - nij) as usize]
                    - lf[(b - nij) as usize]
                    - lf[(n + nij - a - b) as usize];
                let nijf = nij as f64;
                let term = nijf / nf * (nf * nijf / (a as f64 * b as f64)).log2();
                emi += term * ln_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information with the arithmetic-mean normalizer.
pub fn adjusted_mi(t: &ContingencyTable) -> f64 {
    let mi = mutual_information(t);
    let emi = expected_mutual_information(&t.row_sums(), &t.col_sums());
    let mean_h = 0.5 * (intent_entropy(t) + key_entropy(t));
    let denom = mean_h - emi;
    // floating noise below this is treated as a vanishing denominator
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    (mi - emi) / denom
}

fn pairs(k: u64) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Fowlkes–Mallows index over item pairs; 0 when either pair count is 0.
pub fn fowlkes_mallows(t: &ContingencyTable) -> f64 {
    let tp: f64 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let same_key: f64 = t.col_sums().into_iter().map(pairs).sum();
    let same_intent: f64 = t.row_sums().into_iter().map(pairs).sum();
    if tp == 0.0 || same_key == 0.0 || same_intent == 0.0 {
        return 0.0;
    }
    tp / (same_key * same_intent).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyQualityReport {
    pub h: f64,
    pub c: f64,
    pub v: f64,
    pub beta: f64,
    pub mi: f64,
    pub ami: f64,
    pub fmi: f64,
    pub h_intent: f64,
    pub h_key: f64,
    pub rate_bits: f64,
    pub distortion: f64,
    pub n_keys: usize,
}

impl KeyQualityReport {
    pub fn from_table(t: &ContingencyTable, beta: f64) -> Result<Self, MetricsError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(MetricsError::InvalidBeta(beta));
        }
        let h = homogeneity(t);
        let c = completeness(t);
        let n_keys = t.key_labels.len();
        Ok(Self {
            h,
            c,
            v: v_measure(h, c, beta),
            beta,
            mi: mutual_information(t),
            ami: adjusted_mi(t),
            fmi: fowlkes_mallows(t),
            h_intent: intent_entropy(t),
            h_key: key_entropy(t),
            rate_bits: (n_keys as f64).log2(),
            distortion: 1.0 - h,
            n_keys,
        })
    }
}

/// Full key-quality report for one labeling.
pub fn report<T: AsRef<str>, K: AsRef<str>>(
    truth: &[T],
    keys: &[K],
    beta: f64,
) -> Result<KeyQualityReport, MetricsError> {
    KeyQualityReport::from_table(&build_contingency(truth, keys)?, beta)
}
