//! Token economics for cached and uncached agent strategies.
//!
//! A [`Strategy`] splits traffic over tiers. Each tier has a token profile
//! and a price; local tiers carry neither and cost nothing. Everything is
//! plain arithmetic, linear in request volume and in days.
//!
//! Defaults live in `data/pricing.toml` and can be overridden with any
//! file of the same shape.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SHARE_TOLERANCE: f64 = 1e-9;

const DEFAULT_CONFIG: &str = include_str!("../data/pricing.toml");

#[derive(Debug, Error)]
pub enum CostError {
    #[error("strategy {strategy:?}: traffic shares sum to {sum}, expected 1")]
    SharesInvalid { strategy: String, sum: f64 },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("unknown {kind} {name:?}")]
    UnknownReference { kind: &'static str, name: String },
    #[error("cost config: {0}")]
    Config(#[from] toml::de::Error),
    #[error("reading cost config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenProfile {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// USD per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PricePoint {
    pub usd_per_m_input: f64,
    pub usd_per_m_output: f64,
}

impl PricePoint {
    pub const FREE: PricePoint = PricePoint { usd_per_m_input: 0.0, usd_per_m_output: 0.0 };

    pub fn validate(&self) -> Result<(), CostError> {
        for v in [self.usd_per_m_input, self.usd_per_m_output] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CostError::InvalidValue(format!("price {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }

    pub fn is_free(&self) -> bool {
        self.usd_per_m_input == 0.0 && self.usd_per_m_output == 0.0
    }
}

pub fn per_request_cost(profile: TokenProfile, price: PricePoint) -> f64 {
    profile.input_tokens as f64 * price.usd_per_m_input / 1e6
        + profile.output_tokens as f64 * price.usd_per_m_output / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierEconomics {
    pub tier_id: String,
    pub traffic_share: f64,
    pub profile: TokenProfile,
    pub price: PricePoint,
}

impl TierEconomics {
    pub fn local(tier_id: &str, share: f64) -> Self {
        Self {
            tier_id: tier_id.into(),
            traffic_share: share,
            profile: TokenProfile::default(),
            price: PricePoint::FREE,
        }
    }

    pub fn is_local(&self) -> bool {
        self.price.is_free()
    }

    pub fn per_request_cost(&self) -> f64 {
        per_request_cost(self.profile, self.price)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub name: String,
    pub tiers: Vec<TierEconomics>,
}

impl Strategy {
    pub fn validate(&self) -> Result<(), CostError> {
        for t in &self.tiers {
            t.price.validate()?;
            if !(0.0..=1.0).contains(&t.traffic_share) {
                return Err(CostError::InvalidValue(format!(
                    "tier {} share {} outside [0, 1]",
                    t.tier_id, t.traffic_share
                )));
            }
        }
        let sum: f64 = self.tiers.iter().map(|t| t.traffic_share).sum();
        if (sum - 1.0).abs() > SHARE_TOLERANCE {
            return Err(CostError::SharesInvalid { strategy: self.name.clone(), sum });
        }
        Ok(())
    }

    pub fn local_share(&self) -> f64 {
        self.tiers.iter().filter(|t| t.is_local()).fold(0.0, |acc, t| acc + t.traffic_share)
    }

    pub fn tier(&self, tier_id: &str) -> Option<&TierEconomics> {
        self.tiers.iter().find(|t| t.tier_id == tier_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub strategy: String,
    pub requests_per_day: u64,
    pub days: u32,
    pub monthly_cost_usd: f64,
    /// Percent saved against the baseline strategy.
    pub savings_pct: f64,
    pub local_share: f64,
}

impl ScenarioResult {
    /// Sets `savings_pct` to `100 · (1 − cost / baseline)`; zero when the baseline is free.
    pub fn relative_to(mut self, baseline_cost: f64) -> Self {
        self.savings_pct =
            if baseline_cost > 0.0 { 100.0 * (1.0 - self.monthly_cost_usd / baseline_cost) } else { 0.0 };
        self
    }
}

/// Monthly cost of `strategy`; `savings_pct` is left at 0 until [`ScenarioResult::relative_to`].
pub fn monthly_cost(strategy: &Strategy, requests_per_day: u64, days: u32) -> Result<ScenarioResult, CostError> {
    strategy.validate()?;
    let requests = requests_per_day as f64 * days as f64;
    let monthly_cost_usd = strategy.tiers.iter().map(|t| t.traffic_share * requests * t.per_request_cost()).sum();
    Ok(ScenarioResult {
        strategy: strategy.name.clone(),
        requests_per_day,
        days,
        monthly_cost_usd,
        savings_pct: 0.0,
        local_share: strategy.local_share(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRef {
    pub tier_id: String,
    pub share: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub name: String,
    pub tiers: Vec<TierRef>,
}

/// Redistribution rule for [`CostConfig::sensitivity`].
///
/// Above the strategy's own local share, the paid remainder keeps its
/// cheap:deep ratio. Below it, each unit of lost local traffic goes
/// `escalation_share` to the deep tier and the rest to the cheap tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub strategy: String,
    pub cheap_tier: String,
    pub deep_tier: String,
    pub escalation_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub days: u32,
    pub baseline: String,
    pub prices: BTreeMap<String, PricePoint>,
    pub profiles: BTreeMap<String, TokenProfile>,
    pub strategies: Vec<StrategyConfig>,
    pub sensitivity: SensitivityConfig,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG).expect("bundled pricing config parses")
    }
}

impl CostConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, CostError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn strategy(&self, name: &str) -> Result<Strategy, CostError> {
        let cfg = self
            .strategies
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| CostError::UnknownReference { kind: "strategy", name: name.into() })?;
        let tiers = cfg
            .tiers
            .iter()
            .map(|t| {
                let profile = match &t.profile {
                    Some(p) => *self
                        .profiles
                        .get(p)
                        .ok_or_else(|| CostError::UnknownReference { kind: "profile", name: p.clone() })?,
                    None => TokenProfile::default(),
                };
                let price = match &t.price {
                    Some(p) => *self
                        .prices
                        .get(p)
                        .ok_or_else(|| CostError::UnknownReference { kind: "price", name: p.clone() })?,
                    None => PricePoint::FREE,
                };
                Ok(TierEconomics { tier_id: t.tier_id.clone(), traffic_share: t.share, profile, price })
            })
            .collect::<Result<_, CostError>>()?;
        let s = Strategy { name: name.into(), tiers };
        s.validate()?;
        Ok(s)
    }

    pub fn all_strategies(&self) -> Result<Vec<Strategy>, CostError> {
        self.strategies.iter().map(|s| self.strategy(&s.name)).collect()
    }

    /// Every configured strategy at `requests_per_day`, with savings against the baseline.
    pub fn compare(&self, requests_per_day: u64) -> Result<Vec<ScenarioResult>, CostError> {
        let base = monthly_cost(&self.strategy(&self.baseline)?, requests_per_day, self.days)?.monthly_cost_usd;
        self.all_strategies()?
            .iter()
            .map(|s| Ok(monthly_cost(s, requests_per_day, self.days)?.relative_to(base)))
            .collect()
    }

    /// The sensitivity strategy re-weighted to a local share of `local`.
    pub fn reshare(&self, local: f64) -> Result<Strategy, CostError> {
        if !(0.0..=1.0).contains(&local) {
            return Err(CostError::InvalidValue(format!("local share {local} outside [0, 1]")));
        }
        let sens = &self.sensitivity;
        if !(0.0..=1.0).contains(&sens.escalation_share) {
            return Err(CostError::InvalidValue(format!("escalation share {} outside [0, 1]", sens.escalation_share)));
        }
        let mut s = self.strategy(&sens.strategy)?;
        let find = |id: &str| {
            s.tier(id)
                .map(|t| t.traffic_share)
                .ok_or_else(|| CostError::UnknownReference { kind: "tier", name: id.into() })
        };
        let (cheap0, deep0) = (find(&sens.cheap_tier)?, find(&sens.deep_tier)?);
        let local0 = s.local_share();
        if (local0 + cheap0 + deep0 - 1.0).abs() > SHARE_TOLERANCE {
            return Err(CostError::InvalidValue(
                "sensitivity strategy must consist of local tiers plus the cheap and deep tiers".into(),
            ));
        }
        let (cheap, deep) = if local >= local0 {
            let rest = 1.0 - local;
            let paid0 = cheap0 + deep0;
            if paid0 > 0.0 {
                (rest * cheap0 / paid0, rest * deep0 / paid0)
            } else {
                (0.0, 0.0)
            }
        } else {
            let lost = local0 - local;
            (cheap0 + lost * (1.0 - sens.escalation_share), deep0 + lost * sens.escalation_share)
        };
        for t in &mut s.tiers {
            t.traffic_share = if t.tier_id == sens.cheap_tier {
                cheap
            } else if t.tier_id == sens.deep_tier {
                deep
            } else if local0 > 0.0 {
                t.traffic_share * local / local0
            } else {
                0.0
            };
        }
        s.name = format!("{}@{local:.4}", sens.strategy);
        Ok(s)
    }

    pub fn sensitivity(&self, local_grid: &[f64], requests_per_day: u64) -> Result<Vec<ScenarioResult>, CostError> {
        let base = monthly_cost(&self.strategy(&self.baseline)?, requests_per_day, self.days)?.monthly_cost_usd;
        local_grid
            .iter()
            .map(|&l| {
                let mut r = monthly_cost(&self.reshare(l)?, requests_per_day, self.days)?.relative_to(base);
                r.local_share = l;
                Ok(r)
            })
            .collect()
    }

    pub fn scaling_table(&self, requests_per_day: &[u64]) -> Result<Vec<ScalingRow>, CostError> {
        requests_per_day.iter().map(|&r| Ok(ScalingRow { requests_per_day: r, results: self.compare(r)? })).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub requests_per_day: u64,
    pub results: Vec<ScenarioResult>,
}

impl ScalingRow {
    pub fn cost_of(&self, strategy: &str) -> Option<f64> {
        self.results.iter().find(|r| r.strategy == strategy).map(|r| r.monthly_cost_usd)
    }
}

/// Parses `start:end:step` into an inclusive grid.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CostError> {
    let bad = || CostError::InvalidValue(format!("range {spec:?} is not start:end:step"));
    let parts: Vec<f64> =
        spec.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let [start, end, step] = parts[..] else { return Err(bad()) };
    if step.is_nan() || step <= 0.0 || end < start {
        return Err(bad());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
}
