//! Seeded synthetic corpora with a known classifier accuracy.
//!
//! The prediction log is not produced by a model. For each query a latent
//! calibrated confidence `p` is drawn on `[1/K, 1]` with mean equal to the
//! requested accuracy, correctness is drawn as `Bernoulli(p)`, and the
//! remaining mass is spread evenly over the other keys. The overconfident
//! variant reports `softmax(scale · ln probs)`, which temperature scaling with
//! `T = scale` undoes exactly.
//!
//! Embeddings are generated independently: one random unit centroid per
//! class plus isotropic Gaussian noise, renormalized.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{io, HarnessError, Result};
use crate::cascade::PlanTemplate;
use crate::classifier::{fit_centroids, softmax, EmbeddingTable, PrototypeModel};
use crate::model::{CacheKey, IntentLabel, PredictionRecord, Query};

const KEY_BANK: &[(&str, &str)] = &[
    ("check_email", "email"),
    ("send_message", "messaging"),
    ("check_price", "financial"),
    ("get_weather", "weather"),
    ("set_reminder", "calendar"),
    ("play_music", "media"),
    ("book_table", "restaurant"),
    ("order_food", "delivery"),
    ("set_alarm", "alarm"),
    ("call_contact", "phone"),
    ("get_news", "news"),
    ("translate_text", "language"),
    ("find_route", "navigation"),
    ("turn_on", "lights"),
    ("add_item", "shopping_list"),
    ("check_balance", "banking"),
];

const PREFIXES: &[&str] = &["", "please", "can you", "i want to", "quickly", "go ahead and", "help me", "could you"];
const FILLERS: &[&str] = &["", "now", "again", "asap", "right away", "for real", "if possible", "when free"];
const WHO: &[&str] = &["alice", "bob", "carol", "dave", "emma", "frank", "grace", "john", "maria", "sam"];
const WHEN: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const HOW_MUCH: &[&str] = &["100", "250", "3", "42", "1000", "7.5"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConfidenceModel {
    Calibrated,
    Overconfident { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub templates_per_class: usize,
    pub classifier_accuracy: f64,
    pub confidence_model: ConfidenceModel,
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Standard deviation of the embedding noise around each class centroid.
    #[serde(default = "default_noise")]
    pub cluster_noise: f64,
    /// Beta concentration of the latent confidence; larger is tighter around the accuracy.
    #[serde(default = "default_concentration")]
    pub confidence_concentration: f64,
}

fn default_dim() -> usize {
    32
}

fn default_noise() -> f64 {
    0.6
}

fn default_concentration() -> f64 {
    4.0
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_per_class: 50,
            templates_per_class: 4,
            classifier_accuracy: 0.9,
            confidence_model: ConfidenceModel::Calibrated,
            seed: 0,
            embedding_dim: default_dim(),
            cluster_noise: default_noise(),
            confidence_concentration: default_concentration(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.n_per_class == 0 || self.templates_per_class == 0 {
            return bad("n_per_class and templates_per_class must be positive".into());
        }
        let floor = 1.0 / self.n_classes as f64;
        if !(self.classifier_accuracy > floor && self.classifier_accuracy <= 1.0) {
            return bad(format!(
                "classifier_accuracy {} must lie in (1/n_classes, 1] = ({floor}, 1]",
                self.classifier_accuracy
            ));
        }
        if let ConfidenceModel::Overconfident { scale } = self.confidence_model {
            if !(scale > 0.0 && scale.is_finite()) {
                return bad(format!("overconfidence scale {scale} must be positive"));
            }
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim must be at least 2".into());
        }
        if !(self.cluster_noise >= 0.0 && self.cluster_noise.is_finite()) {
            return bad("cluster_noise must be nonnegative".into());
        }
        if !(self.confidence_concentration > 0.0 && self.confidence_concentration.is_finite()) {
            return bad("confidence_concentration must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub keys: Vec<CacheKey>,
    pub dataset: Vec<Query>,
    pub embeddings: EmbeddingTable,
    pub predictions: Vec<PredictionRecord>,
    /// Nearest-prototype model fitted on the embeddings and true keys.
    pub model: PrototypeModel,
    pub plans: Vec<PlanTemplate>,
}

pub fn synthetic_keys(n: usize) -> Vec<CacheKey> {
    (0..n)
        .map(|i| match KEY_BANK.get(i) {
            Some((a, t)) => CacheKey::new(*a, *t).expect("bank keys are valid"),
            None => CacheKey::new(format!("intent_{i}"), format!("domain_{i}")).expect("generated keys are valid"),
        })
        .collect()
}

fn words(token: &str) -> String {
    token.replace('_', " ")
}

fn template_text(key: &CacheKey, template: usize) -> (String, usize) {
    let prefix = PREFIXES[template % PREFIXES.len()];
    let filler = FILLERS[(template / PREFIXES.len()) % FILLERS.len()];
    let action = words(key.action());
    let target = words(key.target());
    let mut text = String::new();
    for part in [prefix, &action] {
        if !part.is_empty() {
            text.push_str(part);
            text.push(' ');
        }
    }
    if !action.split(' ').any(|w| w == target) {
        text.push_str(&target);
        text.push(' ');
    }
    if !filler.is_empty() {
        text.push_str(filler);
        text.push(' ');
    }
    (text, template % 3)
}

fn instantiate<R: Rng>(rng: &mut R, key: &CacheKey, template: usize) -> String {
    let (mut text, slot) = template_text(key, template);
    match slot {
        0 => text.push_str(&format!("for {}", WHO.choose(rng).expect("non-empty"))),
        1 => text.push_str(&format!("on {}", WHEN.choose(rng).expect("non-empty"))),
        _ => text.push_str(&format!("of {}", HOW_MUCH.choose(rng).expect("non-empty"))),
    }
    text
}

fn unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Latent calibrated confidence on `[1/K, 1]` with mean `accuracy`.
fn latent_confidence<R: Rng>(rng: &mut R, spec: &SyntheticSpec) -> f64 {
    let floor = 1.0 / spec.n_classes as f64;
    let m = (spec.classifier_accuracy - floor) / (1.0 - floor);
    if m >= 1.0 {
        return 1.0;
    }
    let k = spec.confidence_concentration;
    let b = Beta::new(m * k, (1.0 - m) * k).expect("validated parameters").sample(rng);
    // keep the predicted key strictly on top
    floor + (1.0 - floor) * b.clamp(1e-9, 1.0)
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let keys = synthetic_keys(spec.n_classes);
    let centroids: Vec<Vec<f64>> = keys.iter().map(|_| unit(&mut rng, spec.embedding_dim)).collect();

    let mut dataset = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    let mut embeddings = EmbeddingTable::new(spec.embedding_dim)?;
    let mut predictions = Vec::with_capacity(dataset.capacity());
    let k = keys.len();
    let noise_scale = spec.cluster_noise / (spec.embedding_dim as f64).sqrt();

    for i in 0..spec.n_per_class {
        for (c, key) in keys.iter().enumerate() {
            let id = format!("s{c:03}-{i:05}");
            let template = i % spec.templates_per_class;
            let text = instantiate(&mut rng, key, template);
            dataset.push(Query::new(id.clone(), text, "en", Some(IntentLabel::from(key)))?);

            let v: Vec<f64> =
                centroids[c].iter().map(|m| m + noise_scale * rng.sample::<f64, _>(StandardNormal)).collect();
            embeddings.insert(id.clone(), v)?;

            let p = latent_confidence(&mut rng, spec);
            let correct = rng.random::<f64>() < p;
            let predicted = if correct {
                c
            } else {
                let j = rng.random_range(0..k - 1);
                if j >= c {
                    j + 1
                } else {
                    j
                }
            };
            let rest = (1.0 - p) / (k - 1) as f64;
            let probs: Vec<f64> = (0..k).map(|j| if j == predicted { p } else { rest }).collect();
            let reported = match spec.confidence_model {
                ConfidenceModel::Calibrated => probs,
                ConfidenceModel::Overconfident { scale } => {
                    let logits: Vec<f64> = probs.iter().map(|q| q.max(f64::MIN_POSITIVE).ln()).collect();
                    softmax(&logits, 1.0 / scale)
                }
            };
            let scores: BTreeMap<CacheKey, f64> = keys.iter().cloned().zip(reported.iter().copied()).collect();
            predictions.push(PredictionRecord {
                query_id: id,
                predicted_key: keys[predicted].clone(),
                confidence: reported[predicted],
                class_scores: Some(scores),
            });
        }
    }

    let labeled: Vec<(String, CacheKey)> = dataset
        .iter()
        .map(|q| (q.id.clone(), q.true_intent.as_ref().and_then(|l| l.as_key()).expect("generated labels are keys")))
        .collect();
    let model = fit_centroids(&labeled, &embeddings)?;
    let plans = keys.iter().map(PlanTemplate::canned).collect();
    Ok(SyntheticData { keys, dataset, embeddings, predictions, model, plans })
}

impl SyntheticData {
    /// Writes `dataset.jsonl`, `embeddings.jsonl`, `predictions.jsonl`, `model.json` and `plans.json`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let paths = [
            dir.join("dataset.jsonl"),
            dir.join("embeddings.jsonl"),
            dir.join("predictions.jsonl"),
            dir.join("model.json"),
            dir.join("plans.json"),
        ];
        io::write_jsonl(&paths[0], &self.dataset)?;
        io::write_embeddings(&paths[1], &self.embeddings)?;
        io::write_jsonl(&paths[2], &self.predictions)?;
        io::write_json(&paths[3], &self.model)?;
        io::write_json(&paths[4], &self.plans)?;
        Ok(paths.to_vec())
    }
}
