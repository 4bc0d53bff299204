use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{BackendError, BackendStats, NliBackend, NliPair};
use crate::types::NliDistribution;

/// Memoizes distributions by exact `(premise, hypothesis)` strings for the
/// lifetime of the process. Duplicates within one batch are sent once.
#[derive(Debug)]
pub struct CachedBackend<B> {
    inner: B,
    cache: Mutex<HashMap<NliPair, NliDistribution>>,
    hits: AtomicU64,
}

impl<B: NliBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        CachedBackend {
            inner,
            cache: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<B: NliBackend> NliBackend for CachedBackend<B> {
    fn classify_pairs(&self, pairs: &[NliPair]) -> Result<Vec<NliDistribution>, BackendError> {
        let mut out: Vec<Option<NliDistribution>> = vec![None; pairs.len()];
        // unique misses, with the first caller index for each
        let mut missing: Vec<NliPair> = Vec::new();
        let mut first_index: Vec<usize> = Vec::new();
        let mut slot_of: HashMap<&NliPair, usize> = HashMap::new();
        let mut hits = 0u64;
        {
            let cache = self.cache.lock().expect("cache lock poisoned");
            for (i, pair) in pairs.iter().enumerate() {
                if let Some(d) = cache.get(pair) {
                    out[i] = Some(*d);
                    hits += 1;
                } else if !slot_of.contains_key(pair) {
                    slot_of.insert(pair, missing.len());
                    missing.push(pair.clone());
                    first_index.push(i);
                } else {
                    hits += 1;
                }
            }
        }
        self.hits.fetch_add(hits, Ordering::Relaxed);

        if !missing.is_empty() {
            let fresh = self
                .inner
                .classify_pairs(&missing)
                .map_err(|e| e.map_index(|j| first_index.get(j).copied().unwrap_or(j)))?;
            if fresh.len() != missing.len() {
                return Err(BackendError::Protocol(format!(
                    "expected {} results, got {}",
                    missing.len(),
                    fresh.len()
                )));
            }
            let mut cache = self.cache.lock().expect("cache lock poisoned");
            for (pair, d) in missing.iter().zip(&fresh) {
                cache.entry(pair.clone()).or_insert(*d);
            }
            for (i, pair) in pairs.iter().enumerate() {
                if out[i].is_none() {
                    out[i] = Some(fresh[slot_of[pair]]);
                }
            }
        }
        Ok(out
            .into_iter()
            .map(|d| d.expect("every slot filled"))
            .collect())
    }

    fn stats(&self) -> BackendStats {
        BackendStats {
            cache_hits: self.hits.load(Ordering::Relaxed),
            ..self.inner.stats()
        }
    }
}
