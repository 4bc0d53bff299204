//! Two-direction checking of one example, and corpus-level orchestration.
//!
//! Omissions: the generated text is the premise and each fact in turn is the
//! hypothesis. Hallucinations: all facts joined by a single space form the
//! premise and the text is the hypothesis.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nli::{classify_batch, BackendError, BackendStats, NliBackend, NliPair, NliRequest};
use crate::templates::{SelectionKey, TemplateRegistry};
use crate::types::{CheckDirection, CheckResult, Example, Fact, FineVerdict, Verdict};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    #[default]
    Both,
    OmissionsOnly,
    HallucinationsOnly,
}

impl CheckMode {
    pub fn checks_omissions(self) -> bool {
        self != CheckMode::HallucinationsOnly
    }

    pub fn checks_hallucinations(self) -> bool {
        self != CheckMode::OmissionsOnly
    }
}

impl fmt::Display for CheckMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckMode::Both => "both",
            CheckMode::OmissionsOnly => "omissions",
            CheckMode::HallucinationsOnly => "hallucinations",
        })
    }
}

impl FromStr for CheckMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(CheckMode::Both),
            "omissions" | "omissions_only" => Ok(CheckMode::OmissionsOnly),
            "hallucinations" | "hallucinations_only" => Ok(CheckMode::HallucinationsOnly),
            other => Err(format!("unknown check mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("example {example_id:?}: {source}")]
pub struct EvaluationError {
    pub example_id: String,
    #[source]
    pub source: BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub example_id: String,
    pub facts: Vec<Fact>,
    pub verdict: Verdict,
    /// Fact checks in fact order, then the text check.
    pub checks: Vec<CheckResult>,
}

impl ExampleResult {
    /// Minimum entailment over the fact-direction checks only.
    pub fn fact_confidence(&self) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.direction == CheckDirection::FactCheck)
            .map(|c| c.distribution.entailment())
            .reduce(f64::min)
    }
}

/// Hallucination-check premise: facts in input order, single-space separated.
pub fn fact_premise(facts: &[Fact]) -> String {
    facts
        .iter()
        .map(|f| f.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn omission_pairs(text: &str, facts: &[Fact]) -> Vec<NliPair> {
    facts.iter().map(|f| NliPair::new(text, &f.text)).collect()
}

fn hallucination_pair(facts: &[Fact], text: &str) -> NliPair {
    NliPair::new(fact_premise(facts), text)
}

pub fn check_omissions<B: NliBackend + ?Sized>(
    text: &str,
    facts: &[Fact],
    backend: &B,
) -> Result<Vec<CheckResult>, BackendError> {
    let request = NliRequest::new(omission_pairs(text, facts))?;
    let distributions = classify_batch(&request, backend)?;
    Ok(request
        .pairs()
        .iter()
        .zip(distributions)
        .map(|(p, d)| CheckResult::new(CheckDirection::FactCheck, &p.premise, &p.hypothesis, d))
        .collect())
}

pub fn check_hallucination<B: NliBackend + ?Sized>(
    facts: &[Fact],
    text: &str,
    backend: &B,
) -> Result<CheckResult, BackendError> {
    let pair = hallucination_pair(facts, text);
    let request = NliRequest::new(vec![pair])?;
    let distribution = classify_batch(&request, backend)?[0];
    let pair = &request.pairs()[0];
    Ok(CheckResult::new(
        CheckDirection::TextCheck,
        &pair.premise,
        &pair.hypothesis,
        distribution,
    ))
}

/// Renders the facts of an example. `index` is the example's position in
/// its corpus and keys template selection.
pub fn render_facts(example: &Example, registry: &TemplateRegistry, index: u64) -> Vec<Fact> {
    example
        .triples
        .iter()
        .enumerate()
        .map(|(pos, t)| {
            registry.render_at(
                t,
                SelectionKey {
                    example: index,
                    position: pos as u64,
                },
            )
        })
        .collect()
}

pub fn evaluate_example<B: NliBackend + ?Sized>(
    example: &Example,
    registry: &TemplateRegistry,
    backend: &B,
    mode: CheckMode,
) -> Result<ExampleResult, EvaluationError> {
    evaluate_example_at(example, 0, registry, backend, mode)
}

/// Evaluates one example, sending all of its checks in a single batch.
pub fn evaluate_example_at<B: NliBackend + ?Sized>(
    example: &Example,
    index: u64,
    registry: &TemplateRegistry,
    backend: &B,
    mode: CheckMode,
) -> Result<ExampleResult, EvaluationError> {
    let fail = |source: BackendError| EvaluationError {
        example_id: example.id.clone(),
        source,
    };
    if let Err(e) = example.validate() {
        return Err(fail(BackendError::InvalidRequest(e.to_string())));
    }
    let facts = render_facts(example, registry, index);

    let mut pairs = Vec::with_capacity(facts.len() + 1);
    if mode.checks_omissions() {
        pairs.extend(omission_pairs(&example.text, &facts));
    }
    if mode.checks_hallucinations() {
        pairs.push(hallucination_pair(&facts, &example.text));
    }
    let request = NliRequest::new(pairs).map_err(fail)?;
    let distributions = classify_batch(&request, backend).map_err(fail)?;

    let n_fact_checks = if mode.checks_omissions() {
        facts.len()
    } else {
        0
    };
    let checks: Vec<CheckResult> = request
        .pairs()
        .iter()
        .zip(distributions)
        .enumerate()
        .map(|(i, (p, d))| {
            let direction = if i < n_fact_checks {
                CheckDirection::FactCheck
            } else {
                CheckDirection::TextCheck
            };
            CheckResult::new(direction, &p.premise, &p.hypothesis, d)
        })
        .collect();
    let verdict = Verdict::from_checks(&checks).expect("at least one check per mode");
    Ok(ExampleResult {
        example_id: example.id.clone(),
        facts,
        verdict,
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub mode: CheckMode,
    pub parallelism: usize,
    /// Abort on the first failed example instead of recording it.
    pub fail_fast: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: CheckMode::Both,
            parallelism: 1,
            fail_fast: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub examples: usize,
    pub evaluated: usize,
    pub evaluation_errors: usize,
    pub fine_counts: BTreeMap<FineVerdict, usize>,
    /// Backend activity during this run.
    pub backend: BackendStats,
    /// Not serialized, so stats files stay reproducible.
    #[serde(skip)]
    pub wall_time_ms: u64,
}

pub type ExampleOutcome = Result<ExampleResult, EvaluationError>;

#[derive(Debug)]
pub struct CorpusRun {
    /// One outcome per input example, in input order.
    pub outcomes: Vec<ExampleOutcome>,
    pub stats: RunStats,
}

fn stats_delta(before: BackendStats, after: BackendStats) -> BackendStats {
    BackendStats {
        requests: after.requests.saturating_sub(before.requests),
        pairs_classified: after
            .pairs_classified
            .saturating_sub(before.pairs_classified),
        cache_hits: after.cache_hits.saturating_sub(before.cache_hits),
    }
}

/// Evaluates every example on a pool of `parallelism` threads. Outcomes come
/// back in input order whatever the execution order. With `fail_fast`, the
/// first error aborts the run and is returned.
pub fn evaluate_corpus<B: NliBackend + ?Sized>(
    examples: &[Example],
    registry: &TemplateRegistry,
    backend: &B,
    options: RunOptions,
) -> Result<CorpusRun, EvaluationError> {
    let started = Instant::now();
    let before = backend.stats();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .expect("thread pool");

    let run_one = |(i, ex): (usize, &Example)| {
        evaluate_example_at(ex, i as u64, registry, backend, options.mode)
    };
    let outcomes: Vec<ExampleOutcome> = pool.install(|| {
        if options.fail_fast {
            examples
                .par_iter()
                .enumerate()
                .map(run_one)
                .collect::<Result<Vec<_>, _>>()
                .map(|ok| ok.into_iter().map(Ok).collect())
        } else {
            Ok(examples.par_iter().enumerate().map(run_one).collect())
        }
    })?;

    let mut stats = RunStats {
        examples: examples.len(),
        ..Default::default()
    };
    for outcome in &outcomes {
        match outcome {
            Ok(r) => {
                stats.evaluated += 1;
                *stats.fine_counts.entry(r.verdict.fine).or_default() += 1;
            }
            Err(_) => stats.evaluation_errors += 1,
        }
    }
    stats.backend = stats_delta(before, backend.stats());
    stats.wall_time_ms = started.elapsed().as_millis() as u64;
    Ok(CorpusRun { outcomes, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nli::FixtureBackend;
    use crate::types::{NliDistribution, RoughVerdict, Triple};

    fn dist(c: f64, n: f64, e: f64) -> NliDistribution {
        NliDistribution::new(c, n, e).unwrap()
    }

    fn pass() -> NliDistribution {
        dist(0.05, 0.15, 0.8)
    }

    fn fail() -> NliDistribution {
        dist(0.1, 0.7, 0.2)
    }

    fn single(text: &str) -> Example {
        Example::new("s", vec![Triple::new("A", "p", "B").unwrap()], text).unwrap()
    }

    /// Premise == hypothesis entails, anything else is neutral.
    struct EchoBackend;

    impl NliBackend for EchoBackend {
        fn classify_pairs(&self, pairs: &[NliPair]) -> Result<Vec<NliDistribution>, BackendError> {
            Ok(pairs
                .iter()
                .map(|p| {
                    if p.premise == p.hypothesis {
                        pass()
                    } else {
                        fail()
                    }
                })
                .collect())
        }
    }

    #[test]
    fn echo_self_entailment() {
        let reg = TemplateRegistry::new(0);
        let ex = single("The p of A is B.");
        let r = evaluate_example(&ex, &reg, &EchoBackend, CheckMode::Both).unwrap();
        assert_eq!(r.verdict.fine, FineVerdict::Ok);

        let facts = render_facts(&ex, &reg, 0);
        let omissions = check_omissions("The p of A is B.", &facts, &EchoBackend).unwrap();
        assert!(omissions[0].passed);
        let h = check_hallucination(&facts, "The p of A is B.", &EchoBackend).unwrap();
        assert!(h.passed);
    }

    #[test]
    fn hallucination_premise_is_space_joined() {
        let reg = TemplateRegistry::new(0);
        let triples = vec![
            Triple::new("A", "p", "B").unwrap(),
            Triple::new("C", "q", "D").unwrap(),
        ];
        let ex = Example::new("two", triples, "x").unwrap();
        let facts = render_facts(&ex, &reg, 0);
        let joined = "The p of A is B. The q of C is D.";
        assert_eq!(fact_premise(&facts), joined);
        let h = check_hallucination(&facts, joined, &EchoBackend).unwrap();
        assert!(h.passed);
        assert_eq!(h.direction, CheckDirection::TextCheck);
    }

    #[test]
    fn modes_restrict_verdicts() {
        let reg = TemplateRegistry::new(0);
        let ex = single("something else");
        let backend = FixtureBackend::new().with_default(fail());
        let both = evaluate_example(&ex, &reg, &backend, CheckMode::Both).unwrap();
        assert_eq!(both.verdict.fine, FineVerdict::OmissionAndHallucination);
        assert_eq!(both.checks.len(), 2);

        let om = evaluate_example(&ex, &reg, &backend, CheckMode::OmissionsOnly).unwrap();
        assert_eq!(om.verdict.fine, FineVerdict::Omission);
        assert_eq!(om.checks.len(), 1);
        assert_eq!(om.checks[0].direction, CheckDirection::FactCheck);

        let ha = evaluate_example(&ex, &reg, &backend, CheckMode::HallucinationsOnly).unwrap();
        assert_eq!(ha.verdict.fine, FineVerdict::Hallucination);
        assert!(ha.verdict.per_fact_passed.is_empty());
        assert_eq!(ha.checks.len(), 1);
        assert_eq!(ha.checks[0].direction, CheckDirection::TextCheck);
    }

    #[test]
    fn ok_does_not_need_majority_entailment() {
        let reg = TemplateRegistry::new(0);
        let backend = FixtureBackend::new().with_default(dist(0.3, 0.3, 0.4));
        let r = evaluate_example(&single("t"), &reg, &backend, CheckMode::Both).unwrap();
        assert_eq!(r.verdict.fine, FineVerdict::Ok);
        assert_eq!(r.verdict.rough, RoughVerdict::Ok);
        assert_eq!(r.verdict.confidence, 0.4);
    }

    #[test]
    fn backend_failure_carries_example_id() {
        let reg = TemplateRegistry::new(0);
        let err = evaluate_example(&single("t"), &reg, &FixtureBackend::new(), CheckMode::Both)
            .unwrap_err();
        assert_eq!(err.example_id, "s");
        assert!(matches!(err.source, BackendError::FixtureIncomplete { .. }));
    }

    #[test]
    fn corpus_counts_and_empty() {
        let reg = TemplateRegistry::new(0);
        let run = evaluate_corpus(&[], &reg, &EchoBackend, RunOptions::default()).unwrap();
        assert!(run.outcomes.is_empty());
        assert_eq!(run.stats.examples, 0);
        assert!(run.stats.fine_counts.is_empty());

        let corpus = vec![
            single("The p of A is B."),
            single("nope"),
            single("The p of A is B."),
        ];
        let run = evaluate_corpus(&corpus, &reg, &EchoBackend, RunOptions::default()).unwrap();
        let counts: Vec<(FineVerdict, usize)> = run.stats.fine_counts.into_iter().collect();
        assert_eq!(
            counts,
            vec![
                (FineVerdict::Ok, 2),
                (FineVerdict::OmissionAndHallucination, 1)
            ]
        );
    }

    #[test]
    fn corpus_records_or_aborts_on_errors() {
        let reg = TemplateRegistry::new(0);
        let mut backend = FixtureBackend::new();
        backend.insert("ok", "The p of A is B.", pass());
        backend.insert("The p of A is B.", "ok", pass());
        let corpus = vec![single("ok"), single("missing"), single("ok")];
        let run = evaluate_corpus(&corpus, &reg, &backend, RunOptions::default()).unwrap();
        assert_eq!(run.stats.evaluated, 2);
        assert_eq!(run.stats.evaluation_errors, 1);
        assert!(run.outcomes[1].is_err());

        let opts = RunOptions {
            fail_fast: true,
            ..Default::default()
        };
        let err = evaluate_corpus(&corpus, &reg, &backend, opts).unwrap_err();
        assert_eq!(err.example_id, "s");
    }
}
