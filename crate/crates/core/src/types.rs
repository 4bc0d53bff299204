//! Domain vocabulary shared by every stage of the pipeline: input triples,
//! rendered facts, NLI outputs and the verdicts built from them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on the sum of an [`NliDistribution`].
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("triple {field} is empty")]
    EmptyTripleField { field: &'static str },
    #[error("probability {name} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("probabilities sum to {sum}, expected 1 ± {DISTRIBUTION_SUM_TOLERANCE}")]
    BadSum { sum: f64 },
    #[error("example {id:?} has no triples")]
    NoTriples { id: String },
    #[error("example {id:?} has empty text")]
    EmptyText { id: String },
    #[error("gold label is inconsistent: fine {fine} with rough {rough}")]
    InconsistentGold {
        fine: FineVerdict,
        rough: RoughVerdict,
    },
    #[error("unknown {kind} label {value:?}")]
    UnknownLabel { kind: &'static str, value: String },
}

/// One subject/predicate/object input fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[String; 3]", into = "[String; 3]")]
pub struct Triple {
    subject: String,
    predicate: String,
    object: String,
}

impl Triple {
    /// Fields are stored as given; only emptiness (after trimming) is checked.
    pub fn new(
        subject: impl Into<String>,
        predicate: impl Into<String>,
        object: impl Into<String>,
    ) -> Result<Self, TypeError> {
        let triple = Triple {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        };
        for (field, value) in [
            ("subject", &triple.subject),
            ("predicate", &triple.predicate),
            ("object", &triple.object),
        ] {
            if value.trim().is_empty() {
                return Err(TypeError::EmptyTripleField { field });
            }
        }
        Ok(triple)
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn object(&self) -> &str {
        &self.object
    }
}

impl TryFrom<[String; 3]> for Triple {
    type Error = TypeError;

    fn try_from([s, p, o]: [String; 3]) -> Result<Self, Self::Error> {
        Triple::new(s, p, o)
    }
}

impl From<Triple> for [String; 3] {
    fn from(t: Triple) -> Self {
        [t.subject, t.predicate, t.object]
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {} | {}", self.subject, self.predicate, self.object)
    }
}

/// A triple verbalized as a single sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub text: String,
    pub source: Triple,
    pub template_id: String,
    pub used_backoff: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Contradiction,
    Neutral,
    Entailment,
}

impl NliLabel {
    /// Fixed order used for tie resolution.
    pub const ALL: [NliLabel; 3] = [
        NliLabel::Contradiction,
        NliLabel::Neutral,
        NliLabel::Entailment,
    ];
}

/// Three-way probability output of one NLI check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct NliDistribution {
    contradiction: f64,
    neutral: f64,
    entailment: f64,
}

/// Wire shape of a distribution, shared with the inference service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawDistribution {
    pub contradiction: f64,
    pub neutral: f64,
    pub entailment: f64,
}

impl NliDistribution {
    pub fn new(contradiction: f64, neutral: f64, entailment: f64) -> Result<Self, TypeError> {
        for (name, value) in [
            ("contradiction", contradiction),
            ("neutral", neutral),
            ("entailment", entailment),
        ] {
            // NaN fails this check as well
            if !(0.0..=1.0).contains(&value) {
                return Err(TypeError::ProbabilityOutOfRange { name, value });
            }
        }
        let sum = contradiction + neutral + entailment;
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
            return Err(TypeError::BadSum { sum });
        }
        Ok(NliDistribution {
            contradiction,
            neutral,
            entailment,
        })
    }

    pub fn contradiction(&self) -> f64 {
        self.contradiction
    }

    pub fn neutral(&self) -> f64 {
        self.neutral
    }

    pub fn entailment(&self) -> f64 {
        self.entailment
    }

    pub fn probability(&self, label: NliLabel) -> f64 {
        match label {
            NliLabel::Contradiction => self.contradiction,
            NliLabel::Neutral => self.neutral,
            NliLabel::Entailment => self.entailment,
        }
    }

    /// Label with the greatest probability. Ties go to the label earliest in
    /// [`NliLabel::ALL`], so entailment only wins when strictly greatest.
    pub fn argmax(&self) -> NliLabel {
        let mut best = NliLabel::Contradiction;
        for label in NliLabel::ALL {
            if self.probability(label) > self.probability(best) {
                best = label;
            }
        }
        best
    }

    /// The pass rule for a single check.
    pub fn entailment_wins(&self) -> bool {
        self.entailment > self.contradiction && self.entailment > self.neutral
    }
}

impl TryFrom<RawDistribution> for NliDistribution {
    type Error = TypeError;

    fn try_from(raw: RawDistribution) -> Result<Self, Self::Error> {
        NliDistribution::new(raw.contradiction, raw.neutral, raw.entailment)
    }
}

impl From<NliDistribution> for RawDistribution {
    fn from(d: NliDistribution) -> Self {
        RawDistribution {
            contradiction: d.contradiction,
            neutral: d.neutral,
            entailment: d.entailment,
        }
    }
}

/// Which way the NLI check runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckDirection {
    /// Text as premise, one fact as hypothesis (omission detection).
    FactCheck,
    /// Concatenated facts as premise, text as hypothesis (hallucination detection).
    TextCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub direction: CheckDirection,
    pub premise: String,
    pub hypothesis: String,
    pub distribution: NliDistribution,
    pub passed: bool,
}

impl CheckResult {
    pub fn new(
        direction: CheckDirection,
        premise: impl Into<String>,
        hypothesis: impl Into<String>,
        distribution: NliDistribution,
    ) -> Self {
        CheckResult {
            direction,
            premise: premise.into(),
            hypothesis: hypothesis.into(),
            distribution,
            passed: distribution.entailment_wins(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FineVerdict {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "omission")]
    Omission,
    #[serde(rename = "hallucination")]
    Hallucination,
    #[serde(rename = "omission+hallucination")]
    OmissionAndHallucination,
}

impl FineVerdict {
    pub const ALL: [FineVerdict; 4] = [
        FineVerdict::Ok,
        FineVerdict::Omission,
        FineVerdict::Hallucination,
        FineVerdict::OmissionAndHallucination,
    ];

    pub fn from_failures(omission: bool, hallucination: bool) -> Self {
        match (omission, hallucination) {
            (false, false) => FineVerdict::Ok,
            (true, false) => FineVerdict::Omission,
            (false, true) => FineVerdict::Hallucination,
            (true, true) => FineVerdict::OmissionAndHallucination,
        }
    }

    pub fn rough(self) -> RoughVerdict {
        match self {
            FineVerdict::Ok => RoughVerdict::Ok,
            _ => RoughVerdict::NotOk,
        }
    }

    pub fn has_omission(self) -> bool {
        matches!(
            self,
            FineVerdict::Omission | FineVerdict::OmissionAndHallucination
        )
    }

    pub fn has_hallucination(self) -> bool {
        matches!(
            self,
            FineVerdict::Hallucination | FineVerdict::OmissionAndHallucination
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FineVerdict::Ok => "OK",
            FineVerdict::Omission => "omission",
            FineVerdict::Hallucination => "hallucination",
            FineVerdict::OmissionAndHallucination => "omission+hallucination",
        }
    }
}

impl fmt::Display for FineVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FineVerdict {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FineVerdict::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| TypeError::UnknownLabel {
                kind: "fine",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoughVerdict {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "not_OK")]
    NotOk,
}

impl RoughVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            RoughVerdict::Ok => "OK",
            RoughVerdict::NotOk => "not_OK",
        }
    }
}

impl fmt::Display for RoughVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoughVerdict {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "OK" => Ok(RoughVerdict::Ok),
            "not_OK" => Ok(RoughVerdict::NotOk),
            _ => Err(TypeError::UnknownLabel {
                kind: "rough",
                value: s.to_string(),
            }),
        }
    }
}

/// Per-example outcome of the metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub fine: FineVerdict,
    pub rough: RoughVerdict,
    /// One entry per fact, empty when omission checks were skipped.
    pub per_fact_passed: Vec<bool>,
    /// Minimum entailment probability over every performed check.
    pub confidence: f64,
}

impl Verdict {
    /// Builds a verdict from the performed checks. Fact checks contribute to
    /// omissions, the text check to hallucinations.
    ///
    /// Returns `None` when `checks` is empty, since confidence is undefined.
    pub fn from_checks(checks: &[CheckResult]) -> Option<Self> {
        let per_fact_passed: Vec<bool> = checks
            .iter()
            .filter(|c| c.direction == CheckDirection::FactCheck)
            .map(|c| c.passed)
            .collect();
        let omission = per_fact_passed.iter().any(|p| !p);
        let hallucination = checks
            .iter()
            .any(|c| c.direction == CheckDirection::TextCheck && !c.passed);
        let confidence = checks
            .iter()
            .map(|c| c.distribution.entailment())
            .reduce(f64::min)?;
        let fine = FineVerdict::from_failures(omission, hallucination);
        Some(Verdict {
            fine,
            rough: fine.rough(),
            per_fact_passed,
            confidence,
        })
    }
}

/// Reference annotation for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGold", into = "RawGold")]
pub struct GoldLabel {
    fine: Option<FineVerdict>,
    rough: RoughVerdict,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawGold {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fine: Option<FineVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rough: Option<RoughVerdict>,
}

impl GoldLabel {
    pub fn rough(rough: RoughVerdict) -> Self {
        GoldLabel { fine: None, rough }
    }

    pub fn fine(fine: FineVerdict) -> Self {
        GoldLabel {
            fine: Some(fine),
            rough: fine.rough(),
        }
    }

    pub fn with_both(fine: FineVerdict, rough: RoughVerdict) -> Result<Self, TypeError> {
        if fine.rough() != rough {
            return Err(TypeError::InconsistentGold { fine, rough });
        }
        Ok(GoldLabel::fine(fine))
    }

    pub fn fine_label(&self) -> Option<FineVerdict> {
        self.fine
    }

    pub fn rough_label(&self) -> RoughVerdict {
        self.rough
    }
}

impl TryFrom<RawGold> for GoldLabel {
    type Error = String;

    fn try_from(raw: RawGold) -> Result<Self, Self::Error> {
        match (raw.fine, raw.rough) {
            (Some(fine), Some(rough)) => {
                GoldLabel::with_both(fine, rough).map_err(|e| e.to_string())
            }
            (Some(fine), None) => Ok(GoldLabel::fine(fine)),
            (None, Some(rough)) => Ok(GoldLabel::rough(rough)),
            (None, None) => Err("gold label needs `fine` or `rough`".to_string()),
        }
    }
}

impl From<GoldLabel> for RawGold {
    fn from(g: GoldLabel) -> Self {
        RawGold {
            fine: g.fine,
            rough: Some(g.rough),
        }
    }
}

/// One generated text together with its input data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub triples: Vec<Triple>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_score: Option<f64>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        triples: Vec<Triple>,
        text: impl Into<String>,
    ) -> Result<Self, TypeError> {
        let example = Example {
            id: id.into(),
            triples,
            text: text.into(),
            gold: None,
            human_score: None,
        };
        example.validate()?;
        Ok(example)
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if self.triples.is_empty() {
            return Err(TypeError::NoTriples {
                id: self.id.clone(),
            });
        }
        if self.text.trim().is_empty() {
            return Err(TypeError::EmptyText {
                id: self.id.clone(),
            });
        }
        Ok(())
    }
}
