//! The classifier contract: `(premise, hypothesis)` pairs in, three-way
//! distributions out, same order.
//!
//! Implementations:
//! - [`FixtureBackend`]: table lookups, for tests and scripted runs.
//! - [`HttpBackend`]: client for the inference sidecar.
//! - [`CachedBackend`]: wraps either and memoizes by exact pair.

mod cache;
mod fixture;
mod http;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CheckDirection, CheckResult, NliDistribution};

pub use cache::CachedBackend;
pub use fixture::{FixtureBackend, FixtureEntry, FixtureFile};
pub use http::{BackendConfig, HealthInfo, HttpBackend};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NliPair {
    pub premise: String,
    pub hypothesis: String,
}

impl NliPair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        NliPair {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable at pair {pair_index} after {attempts} attempt(s): {message}")]
    Unavailable {
        pair_index: usize,
        attempts: u32,
        message: String,
    },
    #[error("fixture has no entry for pair {pair_index}: premise {premise:?}, hypothesis {hypothesis:?}")]
    FixtureIncomplete {
        pair_index: usize,
        premise: String,
        hypothesis: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Rewrites the pair index, e.g. from a sub-batch back to the caller's batch.
    pub(crate) fn map_index(self, f: impl Fn(usize) -> usize) -> Self {
        match self {
            BackendError::Unavailable {
                pair_index,
                attempts,
                message,
            } => BackendError::Unavailable {
                pair_index: f(pair_index),
                attempts,
                message,
            },
            BackendError::FixtureIncomplete {
                pair_index,
                premise,
                hypothesis,
            } => BackendError::FixtureIncomplete {
                pair_index: f(pair_index),
                premise,
                hypothesis,
            },
            other => other,
        }
    }
}

/// Counters reported in run statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendStats {
    /// Transport round trips (HTTP requests) or fixture batch calls.
    pub requests: u64,
    /// Pairs actually sent to the underlying classifier.
    pub pairs_classified: u64,
    pub cache_hits: u64,
}

impl std::ops::Add for BackendStats {
    type Output = BackendStats;

    fn add(self, rhs: Self) -> Self {
        BackendStats {
            requests: self.requests + rhs.requests,
            pairs_classified: self.pairs_classified + rhs.pairs_classified,
            cache_hits: self.cache_hits + rhs.cache_hits,
        }
    }
}

pub trait NliBackend: Send + Sync {
    /// One distribution per pair, in order. Callers go through
    /// [`classify_batch`], which validates the request and the response length.
    fn classify_pairs(&self, pairs: &[NliPair]) -> Result<Vec<NliDistribution>, BackendError>;

    fn stats(&self) -> BackendStats {
        BackendStats::default()
    }
}

impl<B: NliBackend + ?Sized> NliBackend for &B {
    fn classify_pairs(&self, pairs: &[NliPair]) -> Result<Vec<NliDistribution>, BackendError> {
        (**self).classify_pairs(pairs)
    }

    fn stats(&self) -> BackendStats {
        (**self).stats()
    }
}

impl<B: NliBackend + ?Sized> NliBackend for Box<B> {
    fn classify_pairs(&self, pairs: &[NliPair]) -> Result<Vec<NliDistribution>, BackendError> {
        (**self).classify_pairs(pairs)
    }

    fn stats(&self) -> BackendStats {
        (**self).stats()
    }
}

/// A validated, non-empty batch of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct NliRequest {
    pairs: Vec<NliPair>,
}

impl NliRequest {
    pub fn new(pairs: Vec<NliPair>) -> Result<Self, BackendError> {
        if pairs.is_empty() {
            return Err(BackendError::InvalidRequest("no pairs".to_string()));
        }
        if let Some(i) = pairs
            .iter()
            .position(|p| p.premise.trim().is_empty() || p.hypothesis.trim().is_empty())
        {
            return Err(BackendError::InvalidRequest(format!(
                "pair {i} has an empty premise or hypothesis"
            )));
        }
        Ok(NliRequest { pairs })
    }

    pub fn pairs(&self) -> &[NliPair] {
        &self.pairs
    }
}

pub fn classify_batch<B: NliBackend + ?Sized>(
    request: &NliRequest,
    backend: &B,
) -> Result<Vec<NliDistribution>, BackendError> {
    let out = backend.classify_pairs(request.pairs())?;
    if out.len() != request.pairs().len() {
        return Err(BackendError::Protocol(format!(
            "expected {} results, got {}",
            request.pairs().len(),
            out.len()
        )));
    }
    Ok(out)
}

/// Runs a single check. `passed` follows the strict-entailment rule.
pub fn check<B: NliBackend + ?Sized>(
    premise: &str,
    hypothesis: &str,
    direction: CheckDirection,
    backend: &B,
) -> Result<CheckResult, BackendError> {
    let request = NliRequest::new(vec![NliPair::new(premise, hypothesis)])?;
    let distribution = classify_batch(&request, backend)?[0];
    Ok(CheckResult::new(
        direction,
        premise,
        hypothesis,
        distribution,
    ))
}
