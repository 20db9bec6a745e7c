//! Add-k smoothed n-gram model over a whitespace-tokenized corpus.
//!
//! A deterministic local backend for offline runs and boundary-safety tests.
//! The vocabulary is closed over the corpus types plus an unknown token;
//! out-of-vocabulary words map to the unknown token for lookup while the
//! reported token strings keep the original bytes.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{whitespace_chunks, Backend, BackendError, BackendScore};
use crate::scoring::TokenLogProbs;

const UNK: &str = "<unk>";
const BOS: &str = "<s>";

#[derive(Debug)]
pub struct NGramLm {
    order: usize,
    k: f64,
    vocab: BTreeSet<String>,
    /// successor counts and their total, keyed by (order-1)-token history
    counts: HashMap<Vec<String>, (HashMap<String, u64>, u64)>,
    model_id: String,
}

impl NGramLm {
    pub fn from_corpus_text(corpus: &str, order: usize, k: f64) -> Result<Self, BackendError> {
        if order < 1 {
            return Err(BackendError::InvalidSpec("n-gram order must be >= 1".into()));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(BackendError::InvalidSpec(format!(
                "smoothing constant k must be positive, got {k}"
            )));
        }
        let tokens: Vec<String> = corpus.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(BackendError::InvalidSpec("empty corpus".into()));
        }

        let mut vocab: BTreeSet<String> = tokens.iter().cloned().collect();
        vocab.insert(UNK.to_string());

        // Left-pad with BOS so sequence-initial histories are observed.
        let mut stream: Vec<String> = std::iter::repeat(BOS.to_string())
            .take(order - 1)
            .collect();
        stream.extend(tokens);

        let mut counts: HashMap<Vec<String>, (HashMap<String, u64>, u64)> = HashMap::new();
        for window in stream.windows(order) {
            let history = window[..order - 1].to_vec();
            let word = window[order - 1].clone();
            let entry = counts.entry(history).or_default();
            *entry.0.entry(word).or_insert(0) += 1;
            entry.1 += 1;
        }

        let digest = Sha256::digest(corpus.as_bytes());
        let model_id = format!("ngram:order{order}:k{k}:{:02x}{:02x}{:02x}{:02x}", digest[0], digest[1], digest[2], digest[3]);

        Ok(Self {
            order,
            k,
            vocab,
            counts,
            model_id,
        })
    }

    pub fn from_corpus_file(path: &Path, order: usize, k: f64) -> Result<Self, BackendError> {
        let corpus = std::fs::read_to_string(path)?;
        Self::from_corpus_text(&corpus, order, k)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(String::as_str)
    }

    fn map_word<'a>(&self, word: &'a str) -> &'a str
    where
        Self: 'a,
    {
        if self.vocab.contains(word) {
            word
        } else {
            UNK
        }
    }

    /// Add-k smoothed conditional over the closed vocabulary.
    pub fn word_prob(&self, history: &[String], word: &str) -> f64 {
        let vocab_size = self.vocab.len() as f64;
        let (count, total) = match self.counts.get(history) {
            Some((successors, total)) => (
                successors.get(word).copied().unwrap_or(0) as f64,
                *total as f64,
            ),
            None => (0.0, 0.0),
        };
        (count + self.k) / (total + self.k * vocab_size)
    }

    fn history_of(&self, state: &[String]) -> Vec<String> {
        let need = self.order - 1;
        let mut history: Vec<String> = Vec::with_capacity(need);
        let have = state.len().min(need);
        for _ in 0..need - have {
            history.push(BOS.to_string());
        }
        history.extend_from_slice(&state[state.len() - have..]);
        history
    }
}

impl Backend for NGramLm {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<BackendScore, BackendError> {
        if continuation.is_empty() {
            return Err(BackendError::EmptyContinuation);
        }
        let mut state: Vec<String> = whitespace_chunks(context)
            .iter()
            .map(|c| self.map_word(c.trim()).to_string())
            .collect();
        let chunks = whitespace_chunks(continuation);
        let mut logprobs = Vec::with_capacity(chunks.len());
        for chunk in &chunks {
            let word = self.map_word(chunk.trim()).to_string();
            if word.is_empty() {
                return Err(BackendError::NotRepresentable {
                    token: chunk.clone(),
                });
            }
            let history = self.history_of(&state);
            let p = self.word_prob(&history, &word);
            logprobs.push(p.ln().min(0.0));
            state.push(word);
        }
        let score = BackendScore {
            tokens: chunks,
            logprobs: TokenLogProbs::new(logprobs)?,
            model_id: self.model_id.clone(),
            context_echo: context.to_string(),
        };
        score.validate(continuation)?;
        Ok(score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unigram_add_one_matches_hand_count() {
        // corpus "x x y", k=1, vocab {x, y, <unk>}: P(x) = (2+1)/(3+3) = 0.5
        let lm = NGramLm::from_corpus_text("x x y", 1, 1.0).unwrap();
        assert_eq!(lm.vocab_size(), 3);
        let score = lm.score_continuation("", "x").unwrap();
        assert!((score.logprobs.sum() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn conditionals_sum_to_one_over_vocabulary() {
        let lm = NGramLm::from_corpus_text(
            "the cat sat on the mat the cat ran off the mat",
            2,
            0.5,
        )
        .unwrap();
        for context in ["", "the", "cat sat", "unseen words here"] {
            let total: f64 = lm
                .vocab()
                .map(|w| {
                    lm.score_continuation(context, &format!(" {w}"))
                        .unwrap()
                        .logprobs
                        .sum()
                        .exp()
                })
                .sum();
            assert!(
                (total - 1.0).abs() < 1e-9,
                "context {context:?} sums to {total}"
            );
        }
    }

    #[test]
    fn oov_words_share_the_unknown_estimate() {
        let lm = NGramLm::from_corpus_text("a b a b", 2, 1.0).unwrap();
        let frob = lm.score_continuation("a", " frobnicate").unwrap();
        let zorp = lm.score_continuation("a", " zorp").unwrap();
        assert_eq!(frob.logprobs.values(), zorp.logprobs.values());
        assert_eq!(frob.tokens, vec![" frobnicate"]);
    }

    #[test]
    fn token_concatenation_is_byte_exact() {
        let lm = NGramLm::from_corpus_text("a b c", 2, 1.0).unwrap();
        for continuation in [" it was 3 AM.", "拿 unicode  bytes", " trailing space "] {
            let score = lm.score_continuation("a b", continuation).unwrap();
            assert_eq!(score.tokens.concat(), continuation);
        }
    }

    #[test]
    fn repeated_scoring_is_bit_identical() {
        let lm = NGramLm::from_corpus_text("x y z x y", 3, 0.25).unwrap();
        let a = lm.score_continuation("x", " y z").unwrap();
        let b = lm.score_continuation("x", " y z").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(NGramLm::from_corpus_text("a", 0, 1.0).is_err());
        assert!(NGramLm::from_corpus_text("a", 1, 0.0).is_err());
        assert!(NGramLm::from_corpus_text("", 1, 1.0).is_err());
    }
}
