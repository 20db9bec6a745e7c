//! Scoring strategies, log-probability backends, and an evaluation harness
//! for zero-shot (and few-shot) multiple-choice inference with generative
//! language models.
//!
//! The crate is organized around four layers:
//!
//! - [`scoring`] — pure functions mapping per-option log-probability evidence
//!   to strategy scores (`LM`, `Avg`, `PMI_DC`, `Unc`, `CC`, premise scoring)
//!   and a selected option index.
//! - [`backend`] — a uniform contract for obtaining per-token conditional
//!   log-probabilities of a continuation given a context, with an exact toy
//!   oracle, a local n-gram model, a remote completions-style service client,
//!   and a persistent score cache.
//! - [`task`] — dataset ingestion, prompt templates, the cause/effect flip
//!   transformation, and few-shot exemplar sampling.
//! - [`harness`] — orchestration: accuracy evaluation, prompt-robustness
//!   sweeps, wins/ties aggregation, the flipped-scoring ablation, and the
//!   synthetic surface-form-competition lab.

pub mod backend;
pub mod harness;
pub mod scoring;
pub mod task;

pub use backend::{Backend, BackendError, BackendScore};
pub use scoring::{
    CalibrationWeights, OptionEvidence, ScoringError, Strategy, StrategyScore, TokenLogProbs,
    LOG_PROB_FLOOR,
};
pub use task::{Instance, Relation, Template};
