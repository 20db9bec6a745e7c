//! Dataset ingestion, prompt templates, the cause/effect flip transformation,
//! and few-shot exemplar sampling.

use thiserror::Error;

pub mod fewshot;
pub mod flip;
pub mod instance;
pub mod template;

pub use fewshot::{build_fewshot_block, sample_fewshot, FewShotConfig};
pub use flip::copa_flip;
pub use instance::{load_dataset, save_dataset, Instance, Relation};
pub use template::{bundled_template_ids, bundled_templates, render, RenderedOption, Template};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: label {label} out of range for {options} options")]
    LabelOutOfRange {
        line: usize,
        label: i64,
        options: usize,
    },
    #[error("line {line}: missing gold label (required in eval mode)")]
    MissingLabel { line: usize },
    #[error("line {line}: duplicate instance id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {message}")]
    InvalidInstance { line: usize, message: String },
    #[error("not flippable: {0}")]
    NotFlippable(String),
    #[error("template slots unfilled, missing fields: {}", missing.join(", "))]
    MissingSlots { missing: Vec<String> },
    #[error("unknown template {id:?}; available: {}", available.join(", "))]
    UnknownTemplate { id: String, available: Vec<String> },
    #[error("few-shot pool has {pool} instances, need {need}")]
    PoolTooSmall { pool: usize, need: usize },
    #[error("exemplar {id:?} has no gold label")]
    ExemplarWithoutGold { id: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}
