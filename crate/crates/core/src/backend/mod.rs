//! Uniform contract for obtaining per-token conditional log-probabilities of
//! a continuation given a context.
//!
//! Three implementations share the contract: an exact tabulated toy model
//! ([`toy`]), a deterministic add-k smoothed n-gram model ([`ngram`]), and a
//! remote completions-style service client ([`service`]); [`cache`] wraps any
//! of them with a persistent append-only score log.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::TokenLogProbs;

pub mod cache;
pub mod ngram;
pub mod service;
pub mod toy;

pub use cache::{CachedBackend, ScoreCache};
pub use ngram::NGramLm;
pub use service::{ServiceBackend, ServiceBackendConfig};
pub use toy::{ToyLm, ToyLmSpec};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("empty continuation")]
    EmptyContinuation,
    #[error("token {token:?} is not representable in the backend vocabulary")]
    NotRepresentable { token: String },
    #[error("boundary split: a token straddles the context/continuation boundary at byte {offset}; prepend a space to the continuation so the boundary falls on a token edge")]
    BoundarySplit { offset: usize },
    #[error("transport error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport {
        status: Option<u16>,
        message: String,
    },
    #[error("toy LM table is incomplete: no distribution for reachable state {state:?}")]
    IncompleteTable { state: String },
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
    #[error("offline miss: key not cached and no backend configured")]
    OfflineMiss,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Scoring(#[from] crate::scoring::ScoringError),
}

/// Per-token log-probabilities of a continuation, aligned 1:1 with the token
/// strings whose concatenation reproduces the continuation byte-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendScore {
    pub tokens: Vec<String>,
    pub logprobs: TokenLogProbs,
    pub model_id: String,
    /// The exact context string this continuation was scored against.
    pub context_echo: String,
}

impl BackendScore {
    /// Validates the token/log-prob alignment and byte-exact reconstruction.
    pub fn validate(&self, continuation: &str) -> Result<(), BackendError> {
        if self.tokens.len() != self.logprobs.token_count() {
            return Err(BackendError::MalformedResponse(format!(
                "{} tokens but {} log-probs",
                self.tokens.len(),
                self.logprobs.token_count()
            )));
        }
        let rebuilt: String = self.tokens.concat();
        if rebuilt != continuation {
            return Err(BackendError::MalformedResponse(format!(
                "token concatenation {rebuilt:?} does not reconstruct continuation {continuation:?}"
            )));
        }
        Ok(())
    }
}

/// A source of conditional token log-probabilities. Implementations must be
/// safe to call from multiple workers concurrently.
pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Scores `continuation` after `context`: entry `j` of the result is
    /// `log P(token_j | context, tokens_0..j-1)` under the backend's model.
    /// The context may be empty; the continuation may not.
    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<BackendScore, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<BackendScore, BackendError> {
        (**self).score_continuation(context, continuation)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<BackendScore, BackendError> {
        (**self).score_continuation(context, continuation)
    }
}

/// Splits a string into chunks of `[leading whitespace][non-whitespace run]`,
/// so concatenating the chunks reproduces the input byte-exactly. Trailing
/// whitespace attaches to the final chunk. Used by the whitespace-tokenized
/// backends (toy, n-gram); lookups use the trimmed word.
pub(crate) fn whitespace_chunks(s: &str) -> Vec<String> {
    let mut chunks: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut in_word = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            if in_word {
                chunks.push(std::mem::take(&mut current));
                in_word = false;
            }
            current.push(ch);
        } else {
            in_word = true;
            current.push(ch);
        }
    }
    if !current.is_empty() {
        if in_word {
            chunks.push(current);
        } else if let Some(last) = chunks.last_mut() {
            last.push_str(&current);
        } else {
            chunks.push(current);
        }
    }
    chunks
}
