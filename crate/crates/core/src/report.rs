//! Results JSONL: one line per evaluated example, carrying the verdict and
//! every check distribution so failures can be inspected afterwards.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::ExampleOutcome;
use crate::metrics::Prediction;
use crate::types::{CheckDirection, Example, FineVerdict, RawDistribution, RoughVerdict};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("results line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineStatus {
    Ok,
    EvaluationError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRecord {
    pub text: String,
    pub template_id: String,
    pub used_backoff: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub direction: CheckDirection,
    pub premise: String,
    pub hypothesis: String,
    #[serde(flatten)]
    pub distribution: RawDistribution,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub id: String,
    pub status: LineStatus,
    pub n_triples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine: Option<FineVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rough: Option<RoughVerdict>,
    /// Minimum entailment over all performed checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Minimum entailment over fact checks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_fact_checks: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_fact_passed: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub facts: Vec<FactRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultLine {
    pub fn from_outcome(example: &Example, outcome: &ExampleOutcome) -> Self {
        match outcome {
            Ok(r) => ResultLine {
                id: r.example_id.clone(),
                status: LineStatus::Ok,
                n_triples: example.triples.len(),
                fine: Some(r.verdict.fine),
                rough: Some(r.verdict.rough),
                confidence: Some(r.verdict.confidence),
                confidence_fact_checks: r.fact_confidence(),
                per_fact_passed: r.verdict.per_fact_passed.clone(),
                facts: r
                    .facts
                    .iter()
                    .map(|f| FactRecord {
                        text: f.text.clone(),
                        template_id: f.template_id.clone(),
                        used_backoff: f.used_backoff,
                    })
                    .collect(),
                checks: r
                    .checks
                    .iter()
                    .map(|c| CheckRecord {
                        direction: c.direction,
                        premise: c.premise.clone(),
                        hypothesis: c.hypothesis.clone(),
                        distribution: c.distribution.into(),
                        passed: c.passed,
                    })
                    .collect(),
                error: None,
            },
            Err(e) => ResultLine {
                id: example.id.clone(),
                status: LineStatus::EvaluationError,
                n_triples: example.triples.len(),
                fine: None,
                rough: None,
                confidence: None,
                confidence_fact_checks: None,
                per_fact_passed: Vec::new(),
                facts: Vec::new(),
                checks: Vec::new(),
                error: Some(e.source.to_string()),
            },
        }
    }

    pub fn prediction(&self) -> Prediction {
        Prediction {
            id: self.id.clone(),
            fine: match self.status {
                LineStatus::Ok => self.fine,
                LineStatus::EvaluationError => None,
            },
            confidence: self.confidence,
            n_triples: self.n_triples,
        }
    }
}

/// Writes one line per example; `outcomes` must align with `examples`.
pub fn write_results<W: Write>(
    mut writer: W,
    examples: &[Example],
    outcomes: &[ExampleOutcome],
) -> Result<(), ReportError> {
    assert_eq!(examples.len(), outcomes.len(), "one outcome per example");
    for (example, outcome) in examples.iter().zip(outcomes) {
        serde_json::to_writer(&mut writer, &ResultLine::from_outcome(example, outcome))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<ResultLine>, ReportError> {
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ResultLine = serde_json::from_str(&line).map_err(|e| ReportError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if parsed.status == LineStatus::Ok && parsed.fine.is_none() {
            return Err(ReportError::Parse {
                line: idx + 1,
                message: "status ok without a fine verdict".to_string(),
            });
        }
        lines.push(parsed);
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{evaluate_corpus, RunOptions};
    use crate::nli::FixtureBackend;
    use crate::templates::TemplateRegistry;
    use crate::types::{NliDistribution, Triple};

    #[test]
    fn results_round_trip_into_predictions() {
        let examples = vec![
            Example::new("a", vec![Triple::new("A", "p", "B").unwrap()], "t").unwrap(),
            Example::new("b", vec![Triple::new("C", "q", "D").unwrap()], "u").unwrap(),
        ];
        let mut backend = FixtureBackend::new();
        let yes = NliDistribution::new(0.1, 0.1, 0.8).unwrap();
        backend.insert("t", "The p of A is B.", yes);
        backend.insert("The p of A is B.", "t", yes);
        let run = evaluate_corpus(
            &examples,
            &TemplateRegistry::new(0),
            &backend,
            RunOptions::default(),
        )
        .unwrap();

        let mut buf = Vec::new();
        write_results(&mut buf, &examples, &run.outcomes).unwrap();
        let lines = read_results(buf.as_slice()).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].fine, Some(FineVerdict::Ok));
        assert_eq!(lines[0].checks.len(), 2);
        assert_eq!(lines[0].checks[0].distribution.entailment, 0.8);
        assert_eq!(lines[1].status, LineStatus::EvaluationError);
        assert!(lines[1].error.as_deref().unwrap().contains("fixture"));

        let preds: Vec<Prediction> = lines.iter().map(ResultLine::prediction).collect();
        assert_eq!(preds[0].fine, Some(FineVerdict::Ok));
        assert_eq!(preds[0].confidence, Some(0.8));
        assert_eq!(preds[1].fine, None);
        assert_eq!(preds[1].n_triples, 1);
    }

    #[test]
    fn malformed_lines_are_located() {
        let err = read_results("{\"id\":\"a\",\"status\":\"ok\",\"n_triples\":1}\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, ReportError::Parse { line: 1, .. }));
        let err = read_results("\n{bad".as_bytes()).unwrap_err();
        assert!(matches!(err, ReportError::Parse { line: 2, .. }));
    }
}
