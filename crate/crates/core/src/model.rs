//! Domain types shared across the crate.
//!
//! Cache keys are `(action, target)` pairs of lowercase tokens. Their
//! canonical string form is `action:target`; the `:` separator is outside the
//! token alphabet, so the mapping is injective and survives JSON, CSV and
//! shell usage without escaping.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Tolerance on `Σ scores = 1` for prediction records.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid token {0:?}: expected [a-z][a-z0-9_]*")]
    InvalidToken(String),
    #[error("invalid cache key {0:?}: expected action:target")]
    InvalidKey(String),
    #[error("invalid intent label {0:?}")]
    InvalidIntent(String),
    #[error("query id must be non-empty")]
    EmptyId,
    #[error("query {0:?} has empty text")]
    EmptyText(String),
    #[error("unknown parameter slot {0:?}")]
    UnknownSlot(String),
    #[error("parameter slot {0} has an empty value")]
    EmptySlotValue(Slot),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("class scores invalid: {0}")]
    InvalidScores(String),
}

/// Returns true when `s` matches `[a-z][a-z0-9_]*`.
pub fn is_valid_token(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_lowercase() => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

fn check_token(s: &str) -> Result<(), ModelError> {
    if is_valid_token(s) {
        Ok(())
    } else {
        Err(ModelError::InvalidToken(s.to_string()))
    }
}

/// The canonical `(action, target)` cache key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    action: String,
    target: String,
}

impl CacheKey {
    pub fn new(action: impl Into<String>, target: impl Into<String>) -> Result<Self, ModelError> {
        let action = action.into();
        let target = target.into();
        check_token(&action)?;
        check_token(&target)?;
        Ok(Self { action, target })
    }

    pub fn action(&self) -> &str {
        &self.action
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    /// `action:target`.
    pub fn canonical_string(&self) -> String {
        let mut s = String::with_capacity(self.action.len() + self.target.len() + 1);
        s.push_str(&self.action);
        s.push(':');
        s.push_str(&self.target);
        s
    }
}

/// Free-function form of [`CacheKey::canonical_string`].
pub fn canonical_key_string(key: &CacheKey) -> String {
    key.canonical_string()
}

// Ordered by canonical string, so that tie-breaks agree with the serialized form.
impl Ord for CacheKey {
    fn cmp(&self, other: &Self) -> Ordering {
        let a = self.action.bytes().chain(std::iter::once(b':')).chain(self.target.bytes());
        let b = other.action.bytes().chain(std::iter::once(b':')).chain(other.target.bytes());
        a.cmp(b)
    }
}

impl PartialOrd for CacheKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.action, self.target)
    }
}

impl FromStr for CacheKey {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (action, target) = s.split_once(':').ok_or_else(|| ModelError::InvalidKey(s.to_string()))?;
        CacheKey::new(action, target).map_err(|_| ModelError::InvalidKey(s.to_string()))
    }
}

impl Serialize for CacheKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical_string())
    }
}

impl<'de> Deserialize<'de> for CacheKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ground-truth intent label.
///
/// Either a bare token (`weather`) or a canonical key string
/// (`retrieve_email:email`). The second form lets a label be compared
/// directly with a predicted [`CacheKey`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct IntentLabel(String);

impl IntentLabel {
    pub fn new(label: impl Into<String>) -> Result<Self, ModelError> {
        let label = label.into();
        let ok = match label.split_once(':') {
            Some((a, t)) => is_valid_token(a) && is_valid_token(t),
            None => is_valid_token(&label),
        };
        if ok {
            Ok(Self(label))
        } else {
            Err(ModelError::InvalidIntent(label))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True when this label names exactly `key`.
    pub fn matches(&self, key: &CacheKey) -> bool {
        match self.0.split_once(':') {
            Some((a, t)) => a == key.action() && t == key.target(),
            None => false,
        }
    }

    /// The label as a cache key, when it is written in `action:target` form.
    pub fn as_key(&self) -> Option<CacheKey> {
        self.0.parse().ok()
    }
}

impl From<&CacheKey> for IntentLabel {
    fn from(key: &CacheKey) -> Self {
        IntentLabel(key.canonical_string())
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for IntentLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        IntentLabel::new(s).map_err(serde::de::Error::custom)
    }
}

/// One user query. Serialized as a dataset JSONL row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub language: String,
    #[serde(rename = "intent", default, skip_serializing_if = "Option::is_none")]
    pub true_intent: Option<IntentLabel>,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        language: impl Into<String>,
        true_intent: Option<IntentLabel>,
    ) -> Result<Self, ModelError> {
        let q = Self { id: id.into(), text: text.into(), language: language.into(), true_intent };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::EmptyId);
        }
        if self.text.trim().is_empty() {
            return Err(ModelError::EmptyText(self.id.clone()));
        }
        Ok(())
    }
}

/// Parameter slots extracted alongside the cache key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Who,
    When,
    HowMuch,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Who, Slot::When, Slot::HowMuch];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Who => "who",
            Slot::When => "when",
            Slot::HowMuch => "how_much",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Slot {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Slot::ALL.into_iter().find(|slot| slot.name() == s).ok_or_else(|| ModelError::UnknownSlot(s.to_string()))
    }
}

/// Extracted parameter values, keyed by slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    slots: BTreeMap<Slot, String>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `slot` unless it already holds a value. Returns whether the value was stored.
    pub fn insert_first(&mut self, slot: Slot, value: impl Into<String>) -> Result<bool, ModelError> {
        let value = value.into();
        if value.is_empty() {
            return Err(ModelError::EmptySlotValue(slot));
        }
        if self.slots.contains_key(&slot) {
            return Ok(false);
        }
        self.slots.insert(slot, value);
        Ok(true)
    }

    pub fn insert(&mut self, slot: Slot, value: impl Into<String>) -> Result<(), ModelError> {
        let value = value.into();
        if value.is_empty() {
            return Err(ModelError::EmptySlotValue(slot));
        }
        self.slots.insert(slot, value);
        Ok(())
    }

    pub fn get(&self, slot: Slot) -> Option<&str> {
        self.slots.get(&slot).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Slot, &str)> {
        self.slots.iter().map(|(k, v)| (*k, v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Per-query classifier output. Serialized as a prediction-log JSONL row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(rename = "id")]
    pub query_id: String,
    #[serde(rename = "key")]
    pub predicted_key: CacheKey,
    pub confidence: f64,
    #[serde(rename = "scores", default, skip_serializing_if = "Option::is_none")]
    pub class_scores: Option<BTreeMap<CacheKey, f64>>,
}

impl PredictionRecord {
    /// Checks confidence range and, when present, that the scores form a
    /// distribution whose argmax is the predicted key with value `confidence`.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(ModelError::ConfidenceRange(self.confidence));
        }
        let Some(scores) = &self.class_scores else {
            return Ok(());
        };
        if scores.values().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ModelError::InvalidScores("score outside [0, 1]".into()));
        }
        let sum: f64 = scores.values().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
            return Err(ModelError::InvalidScores(format!("scores sum to {sum}")));
        }
        let (best_key, best) =
            argmax_scores(scores).ok_or_else(|| ModelError::InvalidScores("empty score map".into()))?;
        if best_key != &self.predicted_key {
            return Err(ModelError::InvalidScores(format!(
                "argmax {best_key} differs from predicted key {}",
                self.predicted_key
            )));
        }
        if (best - self.confidence).abs() > SCORE_SUM_TOLERANCE {
            return Err(ModelError::InvalidScores(format!(
                "confidence {} differs from max score {best}",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Highest-scoring key; exact ties go to the smallest canonical key string.
pub fn argmax_scores(scores: &BTreeMap<CacheKey, f64>) -> Option<(&CacheKey, f64)> {
    let mut best: Option<(&CacheKey, f64)> = None;
    // BTreeMap iterates in canonical-string order, so strict `>` keeps the smallest key on ties.
    for (k, &v) in scores {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((k, v)),
        }
    }
    best
}
