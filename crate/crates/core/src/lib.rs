//! Evaluation harness for natural-language renderings (NLRs) of SQL result
//! tables.
//!
//! Three ways to decide whether a generated NLR is correct:
//!
//! * thresholding a lexical similarity score against a reference
//!   ([`cascade::metrics_judge`]),
//! * asking an LLM judge ([`cascade::llm_judge_method`]),
//! * a cascade that trusts the score only at its extremes and defers the
//!   middle to the judge ([`cascade::combo_decide`]).
//!
//! References are either a human-written NLR ([`corpus::Scenario::Gt`]) or
//! the question plus the serialized result table
//! ([`corpus::Scenario::Uqdb`]).

pub mod cascade;
pub mod config;
pub mod corpus;
pub mod judge;
pub mod metrics;
pub mod report;
mod template;

pub use cascade::{Decision, Method, Provenance, SingleThreshold, ThresholdBand};
pub use corpus::{CandidateNlr, Corpus, ResultTable, Sample, Scenario, SizeBucket, Split};
pub use judge::{InferenceParams, JudgeClient, JudgeVerdict};
pub use metrics::{MetricKind, TokenSequence};
pub use report::{ClassScores, ConfusionCounts, EvalReport};
