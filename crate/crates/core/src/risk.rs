//! Risk–coverage analysis and risk-controlled threshold selection.
//!
//! The risk of a threshold `τ` is the *marginal* unsafe rate
//! `R̂(τ) = |{i : conf_i ≥ τ ∧ wrong_i}| / n`. It is nonincreasing in `τ`,
//! which is what lets the fixed-sequence (LTT) variants scan the grid from
//! the top down and stop at the first failure.
//!
//! A threshold is certified when `R̂(τ) + C ≤ α`, with the correction `C`
//! chosen by [`BoundVariant`]:
//!
//! | variant | correction |
//! |---|---|
//! | `hoeffding_union` | `√(ln(K/δ) / 2n)` |
//! | `eb_union` | `√(2V̂ ln(3K/δ) / n) + 3 ln(3K/δ) / n` |
//! | `ltt_hoeffding` | `√(ln(1/δ) / 2n)` |
//! | `ltt_eb` | `√(2V̂ ln(3/δ) / n) + 3 ln(3/δ) / n` |
//!
//! `V̂` is the empirical variance `p(1 − p)` of the binary loss at the
//! threshold being tested.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GRID_SIZE: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("calibration set is empty")]
    EmptyInput,
    #[error("no calibration example has confidence >= {0}")]
    NoCoverage(f64),
}

fn invalid(msg: impl Into<String>) -> RiskError {
    RiskError::InvalidParams(msg.into())
}

/// `(confidence, correct)` pairs, kept sorted by confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    conf: Vec<f64>,
    correct: Vec<bool>,
    // suffix_errors[i] = wrong predictions among conf[i..]
    suffix_errors: Vec<usize>,
}

impl CalibrationSet {
    pub fn new(records: &[(f64, bool)]) -> Result<Self, RiskError> {
        if records.is_empty() {
            return Err(RiskError::EmptyInput);
        }
        if let Some((c, _)) = records.iter().find(|(c, _)| !(0.0..=1.0).contains(c)) {
            return Err(invalid(format!("confidence {c} outside [0, 1]")));
        }
        let mut sorted = records.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (conf, correct): (Vec<f64>, Vec<bool>) = sorted.into_iter().unzip();
        let mut suffix_errors = vec![0; conf.len() + 1];
        for i in (0..conf.len()).rev() {
            suffix_errors[i] = suffix_errors[i + 1] + usize::from(!correct[i]);
        }
        Ok(Self { conf, correct, suffix_errors })
    }

    pub fn len(&self) -> usize {
        self.conf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conf.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.conf.iter().copied().zip(self.correct.iter().copied())
    }

    fn first_covered(&self, tau: f64) -> usize {
        self.conf.partition_point(|&c| c < tau)
    }

    fn covered(&self, tau: f64) -> usize {
        self.len() - self.first_covered(tau)
    }

    fn covered_errors(&self, tau: f64) -> usize {
        self.suffix_errors[self.first_covered(tau)]
    }
}

/// Marginal unsafe rate at `tau`.
pub fn empirical_risk(cal: &CalibrationSet, tau: f64) -> f64 {
    cal.covered_errors(tau) as f64 / cal.len() as f64
}

/// Share of examples with confidence `>= tau`.
pub fn coverage(cal: &CalibrationSet, tau: f64) -> f64 {
    cal.covered(tau) as f64 / cal.len() as f64
}

/// Share correct among covered examples.
pub fn safety(cal: &CalibrationSet, tau: f64) -> Result<f64, RiskError> {
    let covered = cal.covered(tau);
    if covered == 0 {
        return Err(RiskError::NoCoverage(tau));
    }
    Ok(1.0 - cal.covered_errors(tau) as f64 / covered as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    HoeffdingUnion,
    EbUnion,
    LttHoeffding,
    LttEb,
}

impl BoundVariant {
    pub const ALL: [BoundVariant; 4] =
        [BoundVariant::HoeffdingUnion, BoundVariant::EbUnion, BoundVariant::LttHoeffding, BoundVariant::LttEb];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundVariant::HoeffdingUnion => "hoeffding_union",
            BoundVariant::EbUnion => "eb_union",
            BoundVariant::LttHoeffding => "ltt_hoeffding",
            BoundVariant::LttEb => "ltt_eb",
        }
    }

    pub fn is_fixed_sequence(self) -> bool {
        matches!(self, BoundVariant::LttHoeffding | BoundVariant::LttEb)
    }

    pub fn uses_variance(self) -> bool {
        matches!(self, BoundVariant::EbUnion | BoundVariant::LttEb)
    }
}

impl fmt::Display for BoundVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for BoundVariant {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BoundVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown bound variant {s:?}")))
    }
}

/// Finite-sample correction term for `variant`.
pub fn correction(variant: BoundVariant, n: usize, k: usize, delta: f64, vhat: f64) -> Result<f64, RiskError> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    if k == 0 {
        return Err(invalid("grid must hold at least one threshold"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta {delta} outside (0, 1)")));
    }
    if variant.uses_variance() && !(0.0..=0.25).contains(&vhat) {
        return Err(invalid(format!("variance {vhat} outside [0, 0.25]")));
    }
    let n = n as f64;
    let k = k as f64;
    let eb = |log_term: f64| (2.0 * vhat * log_term / n).sqrt() + 3.0 * log_term / n;
    Ok(match variant {
        BoundVariant::HoeffdingUnion => ((k / delta).ln() / (2.0 * n)).sqrt(),
        BoundVariant::LttHoeffding => ((1.0 / delta).ln() / (2.0 * n)).sqrt(),
        BoundVariant::EbUnion => eb((3.0 * k / delta).ln()),
        BoundVariant::LttEb => eb((3.0 / delta).ln()),
    })
}

/// `K` equally spaced thresholds on `[0, 0.99]`: `0.00, 0.01, …, 0.99`.
pub fn default_grid() -> Vec<f64> {
    (0..DEFAULT_GRID_SIZE).map(|i| i as f64 / DEFAULT_GRID_SIZE as f64).collect()
}

/// `k` equally spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(k: usize, lo: f64, hi: f64) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..k).map(|i| if i + 1 == k { hi } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 }).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub variant: BoundVariant,
    pub alpha: f64,
    pub delta: f64,
    pub grid: Vec<f64>,
}

impl BoundSpec {
    pub fn new(variant: BoundVariant, alpha: f64, delta: f64) -> Self {
        Self { variant, alpha, delta, grid: default_grid() }
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta {} outside (0, 1)", self.delta)));
        }
        if self.grid.is_empty() {
            return Err(invalid("grid must hold at least one threshold"));
        }
        if self.grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(invalid("grid thresholds must lie in [0, 1]"));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("grid must be strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCertificate {
    /// `None` marks an infeasible certificate.
    pub tau_star: Option<f64>,
    pub variant: BoundVariant,
    pub alpha: f64,
    pub delta: f64,
    pub n: usize,
    pub grid_size: usize,
    /// `R̂ + C` at `tau_star`; for infeasible certificates, the smallest value tested.
    pub ucb_at_tau: f64,
    pub calib_coverage: f64,
}

impl ThresholdCertificate {
    pub fn is_feasible(&self) -> bool {
        self.tau_star.is_some()
    }
}

fn ucb(cal: &CalibrationSet, spec: &BoundSpec, tau: f64) -> Result<f64, RiskError> {
    let risk = empirical_risk(cal, tau);
    let vhat = risk * (1.0 - risk);
    Ok(risk + correction(spec.variant, cal.len(), spec.grid.len(), spec.delta, vhat)?)
}

/// Selects the smallest certified threshold.
pub fn select_threshold(cal: &CalibrationSet, spec: &BoundSpec) -> Result<ThresholdCertificate, RiskError> {
    spec.validate()?;
    let mut tau_star = None;
    let mut best_ucb = f64::INFINITY;
    let mut ucb_star = f64::INFINITY;
    if spec.variant.is_fixed_sequence() {
        for &tau in spec.grid.iter().rev() {
            let u = ucb(cal, spec, tau)?;
            best_ucb = best_ucb.min(u);
            if u > spec.alpha {
                break;
            }
            tau_star = Some(tau);
            ucb_star = u;
        }
    } else {
        for &tau in &spec.grid {
            let u = ucb(cal, spec, tau)?;
            best_ucb = best_ucb.min(u);
            if u <= spec.alpha {
                tau_star = Some(tau);
                ucb_star = u;
                break;
            }
        }
    }
    Ok(ThresholdCertificate {
        tau_star,
        variant: spec.variant,
        alpha: spec.alpha,
        delta: spec.delta,
        n: cal.len(),
        grid_size: spec.grid.len(),
        ucb_at_tau: if tau_star.is_some() { ucb_star } else { best_ucb },
        calib_coverage: tau_star.map_or(0.0, |t| coverage(cal, t)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub coverage: f64,
    /// Empty when nothing is covered.
    pub safety: Option<f64>,
    pub risk: f64,
}

pub fn risk_coverage_sweep(cal: &CalibrationSet, grid: &[f64]) -> Vec<CurvePoint> {
    grid.iter()
        .map(|&tau| CurvePoint {
            tau,
            coverage: coverage(cal, tau),
            safety: safety(cal, tau).ok(),
            risk: empirical_risk(cal, tau),
        })
        .collect()
}

/// Conditional accuracy of a synthetic classifier as a function of its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AccuracyModel {
    /// `P(correct | conf) = conf`.
    Calibrated,
    /// Never wrong.
    Perfect,
    /// `P(correct | conf) = conf^power`; `power > 1` is overconfident.
    Power { power: f64 },
}

/// Confidences uniform on `[conf_low, conf_high]`, correctness drawn from the accuracy model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGenerator {
    pub conf_low: f64,
    pub conf_high: f64,
    pub accuracy: AccuracyModel,
}

impl Default for CalibrationGenerator {
    fn default() -> Self {
        Self { conf_low: 0.5, conf_high: 1.0, accuracy: AccuracyModel::Calibrated }
    }
}

impl CalibrationGenerator {
    pub fn validate(&self) -> Result<(), RiskError> {
        if !(0.0 <= self.conf_low && self.conf_low < self.conf_high && self.conf_high <= 1.0) {
            return Err(invalid("generator confidence range must satisfy 0 <= low < high <= 1"));
        }
        if let AccuracyModel::Power { power } = self.accuracy {
            if !(power > 0.0 && power.is_finite()) {
                return Err(invalid("power must be positive"));
            }
        }
        Ok(())
    }

    pub fn accuracy_at(&self, conf: f64) -> f64 {
        match self.accuracy {
            AccuracyModel::Calibrated => conf,
            AccuracyModel::Perfect => 1.0,
            AccuracyModel::Power { power } => conf.powf(power),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<(f64, bool)> {
        (0..n)
            .map(|_| {
                let c = rng.random_range(self.conf_low..=self.conf_high);
                let ok = rng.random::<f64>() < self.accuracy_at(c);
                (c, ok)
            })
            .collect()
    }

    /// Population marginal unsafe rate `P(conf >= tau ∧ wrong)`, by the
    /// composite Simpson rule on 2000 panels.
    pub fn population_risk(&self, tau: f64) -> f64 {
        let lo = tau.max(self.conf_low);
        if lo >= self.conf_high {
            return 0.0;
        }
        let panels = 2000;
        let h = (self.conf_high - lo) / panels as f64;
        let f = |c: f64| 1.0 - self.accuracy_at(c);
        let mut s = f(lo) + f(self.conf_high);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + i as f64 * h);
        }
        s * h / 3.0 / (self.conf_high - self.conf_low)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeConfig {
    pub n_cal: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for GuaranteeConfig {
    fn default() -> Self {
        Self { n_cal: 500, trials: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub variant: BoundVariant,
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub infeasible: usize,
    /// Selected threshold per trial.
    pub tau_stars: Vec<Option<f64>>,
}

/// RNG for one trial; identical across variants so they see the same data.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Monte-Carlo check of the `(α, δ)` guarantee: in each trial a fresh
/// calibration set picks `τ*`, and the trial violates when the generator's
/// population risk at `τ*` exceeds `α`. Infeasible trials serve nothing and
/// cannot violate.
pub fn validate_guarantee(
    generator: &CalibrationGenerator,
    spec: &BoundSpec,
    config: &GuaranteeConfig,
) -> Result<GuaranteeReport, RiskError> {
    generator.validate()?;
    spec.validate()?;
    if config.n_cal == 0 || config.trials == 0 {
        return Err(invalid("n_cal and trials must be positive"));
    }
    let mut violations = 0;
    let mut infeasible = 0;
    let mut tau_stars = Vec::with_capacity(config.trials);
    for trial in 0..config.trials {
        let mut rng = trial_rng(config.seed, trial);
        let cal = CalibrationSet::new(&generator.sample(&mut rng, config.n_cal))?;
        let cert = select_threshold(&cal, spec)?;
        match cert.tau_star {
            Some(tau) => {
                if generator.population_risk(tau) > spec.alpha {
                    violations += 1;
                }
            }
            None => infeasible += 1,
        }
        tau_stars.push(cert.tau_star);
    }
    Ok(GuaranteeReport {
        variant: spec.variant,
        trials: config.trials,
        violations,
        violation_rate: violations as f64 / config.trials as f64,
        infeasible,
        tau_stars,
    })
}
