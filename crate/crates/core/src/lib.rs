//! Intent canonicalization for agent plan caching.
//!
//! Queries are mapped to canonical `(action, target)` cache keys by a
//! five-tier cascade: a template fingerprint, two confidence-thresholded
//! classifier tiers, and two external resolvers. Around the cascade the crate
//! provides clustering-quality metrics for key functions, risk-controlled
//! threshold calibration, and an API-cost model.
//!
//! | module | role |
//! |---|---|
//! | [`model`] | keys, queries, parameters, prediction records |
//! | [`fingerprint`] | Tier 0 normalization, entity masking, FNV-1a template hash |
//! | [`classifier`] | nearest-prototype classifier over supplied embeddings |
//! | [`calibration`] | expected calibration error and temperature scaling |
//! | [`cascade`] | the tiered router, plan cache and traffic accounting |
//! | [`metrics`] | homogeneity, completeness, V-measure, MI/AMI, FMI, rate/distortion |
//! | [`risk`] | risk-coverage curves and (α, δ) threshold certificates |
//! | [`cost`] | token-level monthly cost model |
//! | [`harness`] | file formats, synthetic data, end-to-end pipeline |

pub mod calibration;
pub mod cascade;
pub mod classifier;
pub mod cost;
pub mod fingerprint;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod risk;

pub use model::{canonical_key_string, CacheKey, IntentLabel, ParamSet, PredictionRecord, Query, Slot};
