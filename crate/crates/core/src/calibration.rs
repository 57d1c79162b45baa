//! Confidence calibration: binned expected calibration error and
//! single-parameter temperature scaling fitted by NLL minimization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::softmax;
use crate::model::CacheKey;

pub const DEFAULT_BINS: usize = 15;
pub const TEMPERATURE_MIN: f64 = 0.05;
pub const TEMPERATURE_MAX: f64 = 50.0;
pub const GOLDEN_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("true key {0} missing from score map")]
    MissingTrueKey(CacheKey),
    #[error("bin count must be positive")]
    ZeroBins,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// 0 for empty bins.
    pub mean_confidence: f64,
    /// 0 for empty bins.
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
    pub n: usize,
    /// Set when the report was produced after temperature fitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_temperature: Option<f64>,
}

/// Equal-width binned ECE; a confidence of exactly 1.0 falls in the top bin.
pub fn ece(predictions: &[(f64, bool)], bins: usize) -> Result<CalibrationReport, CalibrationError> {
    if predictions.is_empty() {
        return Err(CalibrationError::EmptyInput("no predictions"));
    }
    if bins == 0 {
        return Err(CalibrationError::ZeroBins);
    }
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for &(c, ok) in predictions {
        if !(0.0..=1.0).contains(&c) {
            return Err(CalibrationError::ConfidenceRange(c));
        }
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        conf_sum[b] += c;
        correct[b] += usize::from(ok);
        count[b] += 1;
    }
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let bins_out = (0..bins)
        .map(|b| {
            let (mean_confidence, accuracy) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                let k = count[b] as f64;
                (conf_sum[b] / k, correct[b] as f64 / k)
            };
            total += count[b] as f64 / n * (accuracy - mean_confidence).abs();
            ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                mean_confidence,
                accuracy,
                count: count[b],
            }
        })
        .collect();
    Ok(CalibrationReport { ece: total, bins: bins_out, n: predictions.len(), fitted_temperature: None })
}

/// Raw (pre-softmax) per-key scores for one example and its true key.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub scores: BTreeMap<CacheKey, f64>,
    pub truth: CacheKey,
}

fn validate_scored(examples: &[ScoredExample]) -> Result<(), CalibrationError> {
    if examples.len() < 2 {
        return Err(CalibrationError::EmptyInput("temperature fitting needs at least two examples"));
    }
    for ex in examples {
        if !ex.scores.contains_key(&ex.truth) {
            return Err(CalibrationError::MissingTrueKey(ex.truth.clone()));
        }
    }
    Ok(())
}

fn log_softmax_at(scores: &BTreeMap<CacheKey, f64>, truth: &CacheKey, temperature: f64) -> f64 {
    let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = scores.values().map(|s| ((s - max) / temperature).exp()).sum::<f64>().ln();
    (scores[truth] - max) / temperature - lse
}

/// Mean negative log-likelihood of the true keys under `softmax(scores / T)`.
pub fn nll(examples: &[ScoredExample], temperature: f64) -> f64 {
    let total: f64 = examples.iter().map(|ex| -log_softmax_at(&ex.scores, &ex.truth, temperature)).sum();
    total / examples.len() as f64
}

/// Temperature minimizing NLL, by golden-section search on `ln T` over
/// `[ln 0.05, ln 50]`. The interval endpoints and `T = 1` are also
/// evaluated, so the result never does worse than the unscaled model.
pub fn fit_temperature(examples: &[ScoredExample]) -> Result<f64, CalibrationError> {
    validate_scored(examples)?;
    let f = |log_t: f64| nll(examples, log_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TEMPERATURE_MIN.ln(), TEMPERATURE_MAX.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let interior = if fc <= fd { c } else { d };
    let candidates = [TEMPERATURE_MIN, TEMPERATURE_MAX, 1.0, interior.exp()];
    let mut best = (candidates[0], nll(examples, candidates[0]));
    for &t in &candidates[1..] {
        let v = nll(examples, t);
        if v < best.1 {
            best = (t, v);
        }
    }
    Ok(best.0)
}

/// Confidence and correctness of each example after softmax at `temperature`.
pub fn confidences_at(examples: &[ScoredExample], temperature: f64) -> Vec<(f64, bool)> {
    examples
        .iter()
        .map(|ex| {
            let raw: Vec<f64> = ex.scores.values().copied().collect();
            let probs = softmax(&raw, temperature);
            let (mut best_i, mut best_p) = (0, f64::NEG_INFINITY);
            for (i, &p) in probs.iter().enumerate() {
                if p > best_p {
                    best_i = i;
                    best_p = p;
                }
            }
            let predicted = ex.scores.keys().nth(best_i).expect("index in range");
            (best_p, predicted == &ex.truth)
        })
        .collect()
}

/// Fits a temperature and reports ECE before and after scaling.
pub fn temperature_scale(
    fit_on: &[ScoredExample],
    evaluate_on: &[ScoredExample],
    bins: usize,
) -> Result<(CalibrationReport, CalibrationReport), CalibrationError> {
    let t = fit_temperature(fit_on)?;
    let before = ece(&confidences_at(evaluate_on, 1.0), bins)?;
    let mut after = ece(&confidences_at(evaluate_on, t), bins)?;
    after.fitted_temperature = Some(t);
    Ok((before, after))
}
