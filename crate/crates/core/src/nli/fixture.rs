use std::collections::HashMap;
use std::io::Read;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendStats, NliBackend, NliPair};
use crate::types::{NliDistribution, RawDistribution};

/// Table-driven backend. Misses fall back to the default distribution when
/// one is set and are errors otherwise.
#[derive(Debug, Default)]
pub struct FixtureBackend {
    table: HashMap<NliPair, NliDistribution>,
    default: Option<NliDistribution>,
    calls: AtomicU64,
    lookups: AtomicU64,
}

impl FixtureBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_table(table: HashMap<NliPair, NliDistribution>) -> Self {
        FixtureBackend {
            table,
            ..Default::default()
        }
    }

    pub fn with_default(mut self, default: NliDistribution) -> Self {
        self.default = Some(default);
        self
    }

    pub fn insert(
        &mut self,
        premise: impl Into<String>,
        hypothesis: impl Into<String>,
        distribution: NliDistribution,
    ) -> &mut Self {
        self.table
            .insert(NliPair::new(premise, hypothesis), distribution);
        self
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Parses the JSON fixture file format, see [`FixtureFile`].
    pub fn from_json<R: Read>(reader: R) -> Result<Self, serde_json::Error> {
        let file: FixtureFile = serde_json::from_reader(reader)?;
        Ok(file.into())
    }
}

impl NliBackend for FixtureBackend {
    fn classify_pairs(&self, pairs: &[NliPair]) -> Result<Vec<NliDistribution>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.lookups
            .fetch_add(pairs.len() as u64, Ordering::Relaxed);
        pairs
            .iter()
            .enumerate()
            .map(|(i, pair)| {
                self.table
                    .get(pair)
                    .copied()
                    .or(self.default)
                    .ok_or_else(|| BackendError::FixtureIncomplete {
                        pair_index: i,
                        premise: pair.premise.clone(),
                        hypothesis: pair.hypothesis.clone(),
                    })
            })
            .collect()
    }

    fn stats(&self) -> BackendStats {
        BackendStats {
            requests: self.calls.load(Ordering::Relaxed),
            pairs_classified: self.lookups.load(Ordering::Relaxed),
            cache_hits: 0,
        }
    }
}

/// On-disk fixture:
///
/// ```json
/// {"entries": [{"premise": "...", "hypothesis": "...",
///               "contradiction": 0.1, "neutral": 0.1, "entailment": 0.8}],
///  "default": {"contradiction": 0.2, "neutral": 0.5, "entailment": 0.3}}
/// ```
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureFile {
    #[serde(default)]
    pub entries: Vec<FixtureEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<NliDistribution>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawEntry", into = "RawEntry")]
pub struct FixtureEntry {
    pub pair: NliPair,
    pub distribution: NliDistribution,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    premise: String,
    hypothesis: String,
    #[serde(flatten)]
    distribution: RawDistribution,
}

impl TryFrom<RawEntry> for FixtureEntry {
    type Error = crate::types::TypeError;

    fn try_from(raw: RawEntry) -> Result<Self, Self::Error> {
        Ok(FixtureEntry {
            pair: NliPair::new(raw.premise, raw.hypothesis),
            distribution: raw.distribution.try_into()?,
        })
    }
}

impl From<FixtureEntry> for RawEntry {
    fn from(e: FixtureEntry) -> Self {
        RawEntry {
            premise: e.pair.premise,
            hypothesis: e.pair.hypothesis,
            distribution: e.distribution.into(),
        }
    }
}

impl From<FixtureFile> for FixtureBackend {
    fn from(file: FixtureFile) -> Self {
        let table = file
            .entries
            .into_iter()
            .map(|e| (e.pair, e.distribution))
            .collect();
        FixtureBackend {
            table,
            default: file.default,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nli::{check, classify_batch, NliRequest};
    use crate::types::CheckDirection;

    fn dist(c: f64, n: f64, e: f64) -> NliDistribution {
        NliDistribution::new(c, n, e).unwrap()
    }

    #[test]
    fn table_hit_default_and_miss() {
        let mut fixture = FixtureBackend::new();
        fixture.insert("p", "h", dist(0.0, 0.0, 1.0));
        fixture.insert("A.", "A.", dist(0.01, 0.04, 0.95));
        let req = NliRequest::new(vec![NliPair::new("p", "h"), NliPair::new("A.", "A.")]).unwrap();
        assert_eq!(
            classify_batch(&req, &fixture).unwrap(),
            vec![dist(0.0, 0.0, 1.0), dist(0.01, 0.04, 0.95)]
        );

        let req = NliRequest::new(vec![NliPair::new("p", "h"), NliPair::new("x", "y")]).unwrap();
        let err = classify_batch(&req, &fixture).unwrap_err();
        assert!(matches!(
            err,
            BackendError::FixtureIncomplete { pair_index: 1, .. }
        ));

        let third = 1.0 / 3.0;
        let fixture = fixture.with_default(dist(third, third, third));
        let r = check("x", "y", CheckDirection::FactCheck, &fixture).unwrap();
        assert_eq!(r.distribution, dist(third, third, third));
        assert!(!r.passed);
    }

    #[test]
    fn json_format() {
        let json = r#"{"entries":[{"premise":"p","hypothesis":"h","contradiction":0.1,"neutral":0.2,"entailment":0.7}],
                       "default":{"contradiction":0.5,"neutral":0.3,"entailment":0.2}}"#;
        let fixture = FixtureBackend::from_json(json.as_bytes()).unwrap();
        assert_eq!(fixture.len(), 1);
        let req = NliRequest::new(vec![NliPair::new("p", "h"), NliPair::new("q", "r")]).unwrap();
        let out = classify_batch(&req, &fixture).unwrap();
        assert_eq!(out, vec![dist(0.1, 0.2, 0.7), dist(0.5, 0.3, 0.2)]);

        let bad = r#"{"entries":[{"premise":"p","hypothesis":"h","contradiction":0.5,"neutral":0.5,"entailment":0.5}]}"#;
        assert!(FixtureBackend::from_json(bad.as_bytes()).is_err());
    }
}
