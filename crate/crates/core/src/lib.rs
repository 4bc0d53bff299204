//! Referenceless semantic-accuracy checking for data-to-text outputs.
//!
//! Input triples are verbalized through templates, then an NLI classifier
//! checks both directions: the text must entail every fact (otherwise an
//! omission) and the concatenated facts must entail the text (otherwise a
//! hallucination).
//!
//! ```
//! use factcheck_core::evaluator::{evaluate_example, CheckMode};
//! use factcheck_core::nli::FixtureBackend;
//! use factcheck_core::templates::TemplateRegistry;
//! use factcheck_core::types::{Example, FineVerdict, NliDistribution, Triple};
//!
//! let example = Example::new(
//!     "e1",
//!     vec![Triple::new("Blue Spice", "area", "riverside").unwrap()],
//!     "Blue Spice is in the riverside area.",
//! )
//! .unwrap();
//! let backend = FixtureBackend::new().with_default(NliDistribution::new(0.05, 0.05, 0.9).unwrap());
//! let result = evaluate_example(&example, &TemplateRegistry::new(0), &backend, CheckMode::Both).unwrap();
//! assert_eq!(result.verdict.fine, FineVerdict::Ok);
//! assert_eq!(result.facts[0].text, "The area of Blue Spice is riverside.");
//! ```

pub mod evaluator;
pub mod ingestion;
pub mod metrics;
pub mod nli;
pub mod report;
pub mod templates;
pub mod types;

pub use evaluator::{
    evaluate_corpus, evaluate_example, CheckMode, ExampleResult, RunOptions, RunStats,
};
pub use nli::{BackendError, NliBackend};
pub use templates::TemplateRegistry;
pub use types::{
    Example, Fact, FineVerdict, GoldLabel, NliDistribution, RoughVerdict, Triple, Verdict,
};
