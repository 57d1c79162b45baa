//! Five-tier router with a shared plan cache.
//!
//! | tier | resolves when |
//! |---|---|
//! | 0 | the query's template fingerprint was registered by an earlier resolution |
//! | 1, 2 | the classifier is confident (`conf >= τ`) and its key has a cached plan |
//! | 3 | the cheap resolver returns a key and plan; both are cached and the query joins the retraining pool |
//! | 4 | the deep resolver returns a key and plan; always the last stop |
//!
//! Reads share an `RwLock`ed cache; inserts take the write lock. Hit counters
//! are atomic so that cache hits never need the write lock.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, EmbeddingTable, PrototypeModel};
use crate::fingerprint::{FingerprintError, Fingerprinter};
use crate::model::{CacheKey, ModelError, ParamSet, PredictionRecord, Query, Slot};

pub const TIER_COUNT: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("query {0:?}: every enabled tier abstained and no resolver is available")]
    ResolverUnavailable(String),
    #[error("query {query_id:?}: deep resolver failed")]
    DeepResolverFailed { query_id: String },
    #[error("invalid tier configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no prediction for query {0:?}")]
    MissingPrediction(String),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("retraining pool: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierConfig {
    pub tier_id: u8,
    /// Used by tiers 1 and 2 only. Values above 1 make the tier always abstain.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn enabled_default() -> bool {
    true
}

impl TierConfig {
    pub fn new(tier_id: u8, threshold: f64, enabled: bool) -> Self {
        Self { tier_id, threshold, enabled }
    }
}

/// One [`TierConfig`] per tier, indexed by tier id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub tiers: Vec<TierConfig>,
    /// When false, tiers 3 and 4 neither insert plans nor register fingerprints.
    #[serde(default = "enabled_default")]
    pub learn: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            tiers: vec![
                TierConfig::new(0, 0.0, true),
                TierConfig::new(1, DEFAULT_THRESHOLD, false),
                TierConfig::new(2, DEFAULT_THRESHOLD, true),
                TierConfig::new(3, 0.0, true),
                TierConfig::new(4, 0.0, true),
            ],
            learn: true,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), CascadeError> {
        if self.tiers.len() != TIER_COUNT {
            return Err(CascadeError::InvalidConfig(format!("expected {TIER_COUNT} tiers, got {}", self.tiers.len())));
        }
        for (i, t) in self.tiers.iter().enumerate() {
            if usize::from(t.tier_id) != i {
                return Err(CascadeError::InvalidConfig(format!("tier at position {i} has id {}", t.tier_id)));
            }
            if !(t.threshold >= 0.0 && t.threshold.is_finite()) {
                return Err(CascadeError::InvalidConfig(format!("tier {i} threshold {}", t.threshold)));
            }
        }
        Ok(())
    }

    pub fn tier(&self, id: u8) -> &TierConfig {
        &self.tiers[usize::from(id)]
    }

    pub fn set_threshold(&mut self, id: u8, threshold: f64) {
        self.tiers[usize::from(id)].threshold = threshold;
    }

    pub fn set_enabled(&mut self, id: u8, enabled: bool) {
        self.tiers[usize::from(id)].enabled = enabled;
    }
}

/// Ordered plan steps with `{who}`, `{when}`, `{how_much}` markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTemplate {
    pub key: CacheKey,
    pub steps: Vec<String>,
}

/// Splits a step into literal text and slot markers.
fn scan_markers(step: &str) -> Result<Vec<Segment<'_>>, CascadeError> {
    let mut out = Vec::new();
    let mut rest = step;
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .ok_or_else(|| CascadeError::InvalidPlan(format!("unclosed marker in {step:?}")))?;
        let name = &rest[open + 1..close];
        let slot: Slot = name
            .parse()
            .map_err(|_| CascadeError::InvalidPlan(format!("unknown slot marker {{{name}}} in {step:?}")))?;
        out.push(Segment::Text(&rest[..open]));
        out.push(Segment::Slot(slot));
        rest = &rest[close + 1..];
    }
    if rest.contains('}') {
        return Err(CascadeError::InvalidPlan(format!("stray '}}' in {step:?}")));
    }
    out.push(Segment::Text(rest));
    Ok(out)
}

enum Segment<'a> {
    Text(&'a str),
    Slot(Slot),
}

impl PlanTemplate {
    pub fn new(key: CacheKey, steps: Vec<String>) -> Result<Self, CascadeError> {
        let p = Self { key, steps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CascadeError> {
        for s in &self.steps {
            scan_markers(s)?;
        }
        Ok(())
    }

    /// Single step `action(target)`; used when no plan library entry exists.
    pub fn canned(key: &CacheKey) -> Self {
        Self { key: key.clone(), steps: vec![format!("{}({})", key.action(), key.target())] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcretePlan {
    pub steps: Vec<String>,
    /// Slots referenced by the plan but absent from the parameters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<Slot>,
}

impl ConcretePlan {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Fills slot markers; absent slots become `<missing:NAME>` and are listed in `missing`.
pub fn inject_params(plan: &PlanTemplate, params: &ParamSet) -> ConcretePlan {
    let mut missing = Vec::new();
    let steps = plan
        .steps
        .iter()
        .map(|step| {
            // malformed steps (only reachable by bypassing validation) pass through verbatim
            let segments = scan_markers(step).unwrap_or_else(|_| vec![Segment::Text(step)]);
            let mut s = String::with_capacity(step.len());
            for seg in segments {
                match seg {
                    Segment::Text(t) => s.push_str(t),
                    Segment::Slot(slot) => match params.get(slot) {
                        Some(v) => s.push_str(v),
                        None => {
                            s.push_str(&format!("<missing:{}>", slot.name()));
                            if !missing.contains(&slot) {
                                missing.push(slot);
                            }
                        }
                    },
                }
            }
            s
        })
        .collect();
    ConcretePlan { steps, missing }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub plan: PlanTemplate,
    pub hit_count: u64,
    pub created_seq: u64,
}

#[derive(Debug)]
struct StoredEntry {
    plan: PlanTemplate,
    hits: AtomicU64,
    created_seq: u64,
}

/// Plan store plus the fingerprint index used by tier 0.
#[derive(Debug, Default)]
pub struct PlanCache {
    entries: BTreeMap<CacheKey, StoredEntry>,
    fingerprints: HashMap<u64, CacheKey>,
    next_seq: u64,
}

impl PlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `plan` unless its key is already cached. Returns true on insert.
    pub fn insert(&mut self, plan: PlanTemplate) -> bool {
        if self.entries.contains_key(&plan.key) {
            return false;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.insert(plan.key.clone(), StoredEntry { plan, hits: AtomicU64::new(0), created_seq: seq });
        true
    }

    /// Points a template hash at `key`; the first registration wins.
    pub fn register_fingerprint(&mut self, hash: u64, key: &CacheKey) {
        self.fingerprints.entry(hash).or_insert_with(|| key.clone());
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn plan(&self, key: &CacheKey) -> Option<&PlanTemplate> {
        self.entries.get(key).map(|e| &e.plan)
    }

    pub fn key_for_fingerprint(&self, hash: u64) -> Option<&CacheKey> {
        self.fingerprints.get(&hash)
    }

    fn hit(&self, key: &CacheKey) -> Option<&PlanTemplate> {
        let e = self.entries.get(key)?;
        e.hits.fetch_add(1, Ordering::Relaxed);
        Some(&e.plan)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprint_count(&self) -> usize {
        self.fingerprints.len()
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> Vec<CacheEntry> {
        let mut out: Vec<CacheEntry> = self
            .entries
            .iter()
            .map(|(k, e)| CacheEntry {
                key: k.clone(),
                plan: e.plan.clone(),
                hit_count: e.hits.load(Ordering::Relaxed),
                created_seq: e.created_seq,
            })
            .collect();
        out.sort_by_key(|e| e.created_seq);
        out
    }
}

impl Clone for PlanCache {
    fn clone(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    let copy = StoredEntry {
                        plan: e.plan.clone(),
                        hits: AtomicU64::new(e.hits.load(Ordering::Relaxed)),
                        created_seq: e.created_seq,
                    };
                    (k.clone(), copy)
                })
                .collect(),
            fingerprints: self.fingerprints.clone(),
            next_seq: self.next_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub query_id: String,
    pub resolved_tier: u8,
    pub key: Option<CacheKey>,
    pub plan: Option<ConcretePlan>,
    pub was_cache_hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "ParamSet::is_empty")]
    pub params: ParamSet,
}

/// A classifier usable at tier 1 or 2.
pub trait ConfidenceClassifier: Send + Sync {
    fn predict(&self, query: &Query) -> Result<PredictionRecord, CascadeError>;
}

/// Prototype model over precomputed embeddings.
pub struct PrototypeTier {
    pub model: PrototypeModel,
    pub embeddings: EmbeddingTable,
}

impl ConfidenceClassifier for PrototypeTier {
    fn predict(&self, query: &Query) -> Result<PredictionRecord, CascadeError> {
        let v = self.embeddings.get(&query.id).ok_or_else(|| ClassifierError::MissingEmbedding(query.id.clone()))?;
        Ok(self.model.classify(&query.id, v)?)
    }
}

/// Replays a prediction log keyed by query id.
pub struct PredictionLogClassifier {
    records: HashMap<String, PredictionRecord>,
}

impl PredictionLogClassifier {
    pub fn new(records: impl IntoIterator<Item = PredictionRecord>) -> Self {
        Self { records: records.into_iter().map(|r| (r.query_id.clone(), r)).collect() }
    }
}

impl ConfidenceClassifier for PredictionLogClassifier {
    fn predict(&self, query: &Query) -> Result<PredictionRecord, CascadeError> {
        self.records.get(&query.id).cloned().ok_or_else(|| CascadeError::MissingPrediction(query.id.clone()))
    }
}

/// An external resolver for tier 3 or 4. `Ok(None)` is a failure to resolve.
pub trait Resolver: Send + Sync {
    fn resolve(&self, query: &Query) -> Result<Option<PlanTemplate>, CascadeError>;
}

/// Answers with the query's true intent and a plan from its library.
#[derive(Debug, Clone, Default)]
pub struct OracleResolver {
    pub plans: BTreeMap<CacheKey, PlanTemplate>,
}

impl OracleResolver {
    pub fn new(plans: impl IntoIterator<Item = PlanTemplate>) -> Self {
        Self { plans: plans.into_iter().map(|p| (p.key.clone(), p)).collect() }
    }
}

impl Resolver for OracleResolver {
    fn resolve(&self, query: &Query) -> Result<Option<PlanTemplate>, CascadeError> {
        let Some(key) = query.true_intent.as_ref().and_then(|i| i.as_key()) else {
            return Ok(None);
        };
        Ok(Some(self.plans.get(&key).cloned().unwrap_or_else(|| PlanTemplate::canned(&key))))
    }
}

/// Returns one fixed plan after a fixed delay, or always fails.
#[derive(Debug, Clone)]
pub struct StubResolver {
    pub plan: Option<PlanTemplate>,
    pub latency: Duration,
}

impl Resolver for StubResolver {
    fn resolve(&self, _query: &Query) -> Result<Option<PlanTemplate>, CascadeError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        Ok(self.plan.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub text: String,
    pub key: CacheKey,
}

/// Tier-3 outcomes kept for retraining; optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct RetrainingPool {
    records: Mutex<Vec<PoolRecord>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl RetrainingPool {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends to `path`, creating it if needed.
    pub fn with_file(path: &Path) -> Result<Self, CascadeError> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { records: Mutex::default(), file: Some((path.to_path_buf(), Mutex::new(f))) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    fn append(&self, record: PoolRecord) -> Result<(), CascadeError> {
        if let Some((_, f)) = &self.file {
            let mut line = serde_json::to_string(&record).expect("pool record serializes");
            line.push('\n');
            // one write per line on an O_APPEND handle
            f.lock().expect("pool file lock").write_all(line.as_bytes())?;
        }
        self.records.lock().expect("pool lock").push(record);
        Ok(())
    }

    pub fn records(&self) -> Vec<PoolRecord> {
        self.records.lock().expect("pool lock").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("pool lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-tier traffic and, on labeled data, local safety. Counts merge by addition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrafficStats {
    pub total: u64,
    pub per_tier: [u64; TIER_COUNT],
    pub cache_hits: u64,
    /// Tier 0–2 resolutions whose query carries a key-shaped label.
    pub labeled_local: u64,
    pub correct_local: u64,
    pub coverage: f64,
    pub tier_shares: [f64; TIER_COUNT],
    pub safety: Option<f64>,
    pub unsafe_rate: Option<f64>,
}

impl TrafficStats {
    pub fn record(&mut self, query: &Query, r: &Resolution) {
        self.total += 1;
        self.per_tier[usize::from(r.resolved_tier)] += 1;
        self.cache_hits += u64::from(r.was_cache_hit);
        if r.resolved_tier <= 2 {
            if let (Some(label), Some(key)) = (&query.true_intent, &r.key) {
                if label.as_key().is_some() {
                    self.labeled_local += 1;
                    self.correct_local += u64::from(label.matches(key));
                }
            }
        }
        self.refresh();
    }

    pub fn merge(&mut self, other: &TrafficStats) {
        self.total += other.total;
        for (a, b) in self.per_tier.iter_mut().zip(other.per_tier) {
            *a += b;
        }
        self.cache_hits += other.cache_hits;
        self.labeled_local += other.labeled_local;
        self.correct_local += other.correct_local;
        self.refresh();
    }

    pub fn local(&self) -> u64 {
        self.per_tier[..3].iter().sum()
    }

    fn refresh(&mut self) {
        let n = self.total.max(1) as f64;
        self.coverage = if self.total == 0 { 0.0 } else { self.local() as f64 / n };
        for (s, c) in self.tier_shares.iter_mut().zip(self.per_tier) {
            *s = if self.total == 0 { 0.0 } else { c as f64 / n };
        }
        self.safety = (self.labeled_local > 0).then(|| self.correct_local as f64 / self.labeled_local as f64);
        self.unsafe_rate = self.safety.map(|s| 1.0 - s);
    }
}

pub struct Cascade {
    config: CascadeConfig,
    fingerprinter: Fingerprinter,
    classifiers: [Option<Box<dyn ConfidenceClassifier>>; 2],
    resolvers: [Option<Box<dyn Resolver>>; 2],
    cache: RwLock<PlanCache>,
    pool: RetrainingPool,
}

impl Cascade {
    pub fn new(config: CascadeConfig, fingerprinter: Fingerprinter) -> Result<Self, CascadeError> {
        config.validate()?;
        Ok(Self {
            config,
            fingerprinter,
            classifiers: [None, None],
            resolvers: [None, None],
            cache: RwLock::new(PlanCache::new()),
            pool: RetrainingPool::in_memory(),
        })
    }

    pub fn with_tier1(mut self, c: Box<dyn ConfidenceClassifier>) -> Self {
        self.classifiers[0] = Some(c);
        self
    }

    pub fn with_tier2(mut self, c: Box<dyn ConfidenceClassifier>) -> Self {
        self.classifiers[1] = Some(c);
        self
    }

    pub fn with_cheap_resolver(mut self, r: Box<dyn Resolver>) -> Self {
        self.resolvers[0] = Some(r);
        self
    }

    pub fn with_deep_resolver(mut self, r: Box<dyn Resolver>) -> Self {
        self.resolvers[1] = Some(r);
        self
    }

    pub fn with_pool(mut self, pool: RetrainingPool) -> Self {
        self.pool = pool;
        self
    }

    pub fn with_cache(self, cache: PlanCache) -> Self {
        *self.cache.write().expect("cache lock") = cache;
        self
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn pool(&self) -> &RetrainingPool {
        &self.pool
    }

    /// A copy of the current cache.
    pub fn cache_snapshot(&self) -> PlanCache {
        self.cache.read().expect("cache lock").clone()
    }

    /// Seeds the cache with a plan, e.g. from a plan library.
    pub fn preload(&self, plan: PlanTemplate) -> Result<bool, CascadeError> {
        plan.validate()?;
        Ok(self.cache.write().expect("cache lock").insert(plan))
    }

    pub fn route(&self, query: &Query) -> Result<Resolution, CascadeError> {
        query.validate()?;
        let (fp, params) = self.fingerprinter.fingerprint(query)?;
        let resolution = |tier: u8, key: &CacheKey, plan: &PlanTemplate, hit: bool, conf: Option<f64>| Resolution {
            query_id: query.id.clone(),
            resolved_tier: tier,
            key: Some(key.clone()),
            plan: Some(inject_params(plan, &params)),
            was_cache_hit: hit,
            confidence: conf,
            params: params.clone(),
        };

        if self.config.tier(0).enabled {
            let cache = self.cache.read().expect("cache lock");
            if let Some(key) = cache.key_for_fingerprint(fp.hash).cloned() {
                if let Some(plan) = cache.hit(&key) {
                    return Ok(resolution(0, &key, plan, true, None));
                }
            }
        }

        for (i, classifier) in self.classifiers.iter().enumerate() {
            let tier = i as u8 + 1;
            let cfg = self.config.tier(tier);
            let Some(classifier) = classifier.as_ref().filter(|_| cfg.enabled) else {
                continue;
            };
            let pred = classifier.predict(query)?;
            if pred.confidence >= cfg.threshold {
                let cache = self.cache.read().expect("cache lock");
                if let Some(plan) = cache.hit(&pred.predicted_key) {
                    return Ok(resolution(tier, &pred.predicted_key, plan, true, Some(pred.confidence)));
                }
            }
        }

        for (i, resolver) in self.resolvers.iter().enumerate() {
            let tier = i as u8 + 3;
            let Some(resolver) = resolver.as_ref().filter(|_| self.config.tier(tier).enabled) else {
                continue;
            };
            match resolver.resolve(query)? {
                Some(plan) => {
                    plan.validate()?;
                    if self.config.learn {
                        let mut cache = self.cache.write().expect("cache lock");
                        cache.insert(plan.clone());
                        cache.register_fingerprint(fp.hash, &plan.key);
                    }
                    if tier == 3 {
                        self.pool.append(PoolRecord { text: query.text.clone(), key: plan.key.clone() })?;
                    }
                    return Ok(resolution(tier, &plan.key, &plan, false, None));
                }
                None if tier == 4 => return Err(CascadeError::DeepResolverFailed { query_id: query.id.clone() }),
                None => {}
            }
        }
        Err(CascadeError::ResolverUnavailable(query.id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub stats: TrafficStats,
    pub resolutions: Vec<Resolution>,
}

/// Streams `queries` through `cascade` in order.
pub fn simulate(cascade: &Cascade, queries: &[Query]) -> Result<SimulationOutput, CascadeError> {
    let mut stats = TrafficStats::default();
    let mut resolutions = Vec::with_capacity(queries.len());
    for q in queries {
        let r = cascade.route(q)?;
        stats.record(q, &r);
        resolutions.push(r);
    }
    Ok(SimulationOutput { stats, resolutions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IntentLabel;

    fn key(s: &str) -> CacheKey {
        s.parse().unwrap()
    }

    fn q(id: &str, text: &str, intent: Option<&str>) -> Query {
        Query::new(id, text, "en", intent.map(|i| IntentLabel::new(i).unwrap())).unwrap()
    }

    fn plan(k: &str, steps: &[&str]) -> PlanTemplate {
        PlanTemplate::new(key(k), steps.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn params(pairs: &[(Slot, &str)]) -> ParamSet {
        let mut p = ParamSet::new();
        for (s, v) in pairs {
            p.insert(*s, *v).unwrap();
        }
        p
    }

    fn oracle() -> OracleResolver {
        OracleResolver::new([plan("check_email:email", &["open_mail(from={who})"])])
    }

    struct Fixed(f64, &'static str);

    impl ConfidenceClassifier for Fixed {
        fn predict(&self, query: &Query) -> Result<PredictionRecord, CascadeError> {
            Ok(PredictionRecord {
                query_id: query.id.clone(),
                predicted_key: key(self.1),
                confidence: self.0,
                class_scores: None,
            })
        }
    }

    #[test]
    fn inject_examples() {
        let p = plan("a:b", &["open_mail({who})"]);
        let c = inject_params(&p, &params(&[(Slot::Who, "alice")]));
        assert_eq!(c.steps, ["open_mail(alice)"]);
        assert!(c.is_complete());
        let c = inject_params(&p, &ParamSet::new());
        assert_eq!(c.steps, ["open_mail(<missing:who>)"]);
        assert_eq!(c.missing, [Slot::Who]);
        let p = plan("a:b", &["price({who}) limit {how_much}"]);
        let c = inject_params(&p, &params(&[(Slot::Who, "nvda"), (Slot::HowMuch, "5")]));
        assert_eq!(c.steps, ["price(nvda) limit 5"]);
    }

    #[test]
    fn plan_markers_validated() {
        assert!(PlanTemplate::new(key("a:b"), vec!["x({whom})".into()]).is_err());
        assert!(PlanTemplate::new(key("a:b"), vec!["x({who)".into()]).is_err());
        assert!(PlanTemplate::new(key("a:b"), vec!["x}".into()]).is_err());
        assert!(PlanTemplate::new(key("a:b"), vec!["{when}{how_much}".into()]).is_ok());
    }

    #[test]
    fn parameter_swap_hits_tier0() {
        let c = Cascade::new(CascadeConfig::default(), Fingerprinter::default())
            .unwrap()
            .with_cheap_resolver(Box::new(oracle()));
        let first = c.route(&q("1", "Check email from Alice", Some("check_email:email"))).unwrap();
        assert_eq!(first.resolved_tier, 3);
        assert!(!first.was_cache_hit);
        let second = c.route(&q("2", "Check email from Bob", Some("check_email:email"))).unwrap();
        assert_eq!(second.resolved_tier, 0);
        assert!(second.was_cache_hit);
        assert_eq!(second.params.get(Slot::Who), Some("bob"));
        assert_eq!(second.plan.unwrap().steps, ["open_mail(from=bob)"]);
        assert_eq!(c.cache_snapshot().entries()[0].hit_count, 1);
    }

    #[test]
    fn low_confidence_falls_to_tier3() {
        let c = Cascade::new(CascadeConfig::default(), Fingerprinter::default())
            .unwrap()
            .with_tier2(Box::new(Fixed(0.10, "check_email:email")))
            .with_cheap_resolver(Box::new(oracle()));
        c.preload(plan("check_email:email", &["open_mail()"])).unwrap();
        let r = c.route(&q("1", "any mail for me", Some("check_email:email"))).unwrap();
        assert_eq!(r.resolved_tier, 3);
    }

    #[test]
    fn confident_key_without_plan_falls_through() {
        let c = Cascade::new(CascadeConfig::default(), Fingerprinter::default())
            .unwrap()
            .with_tier2(Box::new(Fixed(0.99, "check_email:email")))
            .with_cheap_resolver(Box::new(oracle()));
        let r = c.route(&q("1", "any mail for me", Some("check_email:email"))).unwrap();
        assert_eq!(r.resolved_tier, 3);
        let r = c.route(&q("2", "inbox status please", Some("check_email:email"))).unwrap();
        assert_eq!(r.resolved_tier, 2);
        assert_eq!(r.confidence, Some(0.99));
    }

    #[test]
    fn total_abstention_reaches_resolver() {
        let mut cfg = CascadeConfig::default();
        cfg.set_enabled(1, true);
        cfg.set_threshold(1, 1.01);
        cfg.set_threshold(2, 1.01);
        let c = Cascade::new(cfg, Fingerprinter::default())
            .unwrap()
            .with_tier1(Box::new(Fixed(1.0, "a:b")))
            .with_tier2(Box::new(Fixed(1.0, "a:b")))
            .with_deep_resolver(Box::new(StubResolver { plan: Some(plan("a:b", &["x"])), latency: Duration::ZERO }));
        c.preload(plan("a:b", &["x"])).unwrap();
        assert_eq!(c.route(&q("1", "hello", None)).unwrap().resolved_tier, 4);
    }

    #[test]
    fn no_resolver_errors() {
        let c = Cascade::new(CascadeConfig::default(), Fingerprinter::default()).unwrap();
        assert!(matches!(c.route(&q("1", "hello", None)), Err(CascadeError::ResolverUnavailable(_))));
        let failing = StubResolver { plan: None, latency: Duration::ZERO };
        let c = Cascade::new(CascadeConfig::default(), Fingerprinter::default())
            .unwrap()
            .with_cheap_resolver(Box::new(failing.clone()))
            .with_deep_resolver(Box::new(failing));
        assert!(matches!(c.route(&q("1", "hello", None)), Err(CascadeError::DeepResolverFailed { .. })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = CascadeConfig::default();
        cfg.tiers.swap(0, 1);
        assert!(cfg.validate().is_err());
        let mut cfg = CascadeConfig::default();
        cfg.set_threshold(2, -0.1);
        assert!(cfg.validate().is_err());
        cfg.tiers.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn learning_loop_and_accounting() {
        let dir = tempfile::tempdir().unwrap();
        let pool_path = dir.path().join("pool.jsonl");
        let c = Cascade::new(CascadeConfig::default(), Fingerprinter::default())
            .unwrap()
            .with_tier2(Box::new(Fixed(0.9, "check_email:email")))
            .with_cheap_resolver(Box::new(oracle()))
            .with_pool(RetrainingPool::with_file(&pool_path).unwrap());
        let qs = [
            q("1", "check email from alice", Some("check_email:email")),
            q("2", "check email from bob", Some("check_email:email")),
            q("3", "what's the weather", Some("get_weather:weather")),
            q("4", "weather outlook", Some("get_weather:weather")),
            q("5", "unlabeled thing", None),
        ];
        let out = simulate(&c, &qs).unwrap();
        let s = &out.stats;
        assert_eq!(s.total, 5);
        assert_eq!(s.per_tier.iter().sum::<u64>(), 5);
        assert_eq!(s.per_tier, [1, 0, 3, 1, 0]);
        // tier 0 serves query 2 correctly; tier 2 misroutes both weather queries
        assert_eq!((s.labeled_local, s.correct_local), (3, 1));
        assert_eq!(s.unsafe_rate.unwrap(), 1.0 - s.safety.unwrap());
        let pool: Vec<PoolRecord> =
            std::fs::read_to_string(&pool_path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(pool.len(), s.per_tier[3] as usize);
        let cache = c.cache_snapshot();
        for r in out.resolutions.iter().filter(|r| r.resolved_tier == 3) {
            assert!(cache.contains(r.key.as_ref().unwrap()));
        }
    }

    #[test]
    fn stats_merge_is_associative_with_recording() {
        let qs: Vec<_> = (0..6).map(|i| q(&i.to_string(), "x", Some("a:b"))).collect();
        let rs: Vec<_> = (0..6)
            .map(|i| Resolution {
                query_id: i.to_string(),
                resolved_tier: (i % 5) as u8,
                key: Some(key(if i % 2 == 0 { "a:b" } else { "c:d" })),
                plan: None,
                was_cache_hit: i % 5 <= 2,
                confidence: None,
                params: ParamSet::new(),
            })
            .collect();
        let mut whole = TrafficStats::default();
        let (mut left, mut right) = (TrafficStats::default(), TrafficStats::default());
        for (i, (qq, r)) in qs.iter().zip(&rs).enumerate() {
            whole.record(qq, r);
            if i < 3 {
                left.record(qq, r)
            } else {
                right.record(qq, r)
            }
        }
        left.merge(&right);
        assert_eq!(left, whole);
    }

    #[test]
    fn concurrent_routing() {
        let c = Cascade::new(CascadeConfig::default(), Fingerprinter::default())
            .unwrap()
            .with_cheap_resolver(Box::new(oracle()));
        c.route(&q("w", "check email from alice", Some("check_email:email"))).unwrap();
        std::thread::scope(|s| {
            for t in 0..4 {
                let c = &c;
                s.spawn(move || {
                    for i in 0..25 {
                        let r = c.route(&q(&format!("{t}-{i}"), "check email from bob", None)).unwrap();
                        assert_eq!(r.resolved_tier, 0);
                    }
                });
            }
        });
        assert_eq!(c.cache_snapshot().entries()[0].hit_count, 100);
    }
}
