//! Fully tabulated finite language model used as an exact test oracle.
//!
//! The spec assigns a complete next-token distribution to every reachable
//! prefix, so every conditional, marginal, and posterior string probability
//! can be enumerated exactly by brute force. The enumeration path walks all
//! complete sequences and never reuses the chain-rule scoring path it is
//! meant to check.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{whitespace_chunks, Backend, BackendError, BackendScore};
use crate::scoring::{TokenLogProbs, LOG_PROB_FLOOR};

const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-12;

/// Tabulated next-token distributions keyed by the full prefix.
///
/// State keys are space-joined token sequences; `""` is the empty state.
/// Sequences terminate on the end marker or implicitly once `max_len`
/// content tokens have been emitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyLmSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub vocabulary: Vec<String>,
    #[serde(default = "default_end_marker")]
    pub end_marker: String,
    pub max_len: usize,
    pub table: BTreeMap<String, BTreeMap<String, f64>>,
}

fn default_name() -> String {
    "toy".to_string()
}

fn default_end_marker() -> String {
    "</s>".to_string()
}

impl ToyLmSpec {
    pub fn from_json(json: &str) -> Result<Self, BackendError> {
        let spec: ToyLmSpec = serde_json::from_str(json)
            .map_err(|e| BackendError::InvalidSpec(format!("bad toy spec JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Checks normalization, vocabulary closure, and complete coverage of
    /// every prefix reachable from the empty state.
    pub fn validate(&self) -> Result<(), BackendError> {
        let vocab: BTreeSet<&str> = self.vocabulary.iter().map(String::as_str).collect();
        if !vocab.contains(self.end_marker.as_str()) {
            return Err(BackendError::InvalidSpec(format!(
                "end marker {:?} missing from vocabulary",
                self.end_marker
            )));
        }
        if self.max_len == 0 {
            return Err(BackendError::InvalidSpec("max_len must be >= 1".into()));
        }
        for (state, dist) in &self.table {
            let depth = state_tokens(state).len();
            let mut sum = 0.0;
            for (token, &p) in dist {
                if !vocab.contains(token.as_str()) {
                    return Err(BackendError::InvalidSpec(format!(
                        "state {state:?} emits {token:?}, not in vocabulary"
                    )));
                }
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(BackendError::InvalidSpec(format!(
                        "state {state:?} assigns invalid probability {p} to {token:?}"
                    )));
                }
                if depth >= self.max_len && token != &self.end_marker && p > 0.0 {
                    return Err(BackendError::InvalidSpec(format!(
                        "state {state:?} at max_len emits content token {token:?}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
                return Err(BackendError::InvalidSpec(format!(
                    "state {state:?} distribution sums to {sum}, expected 1"
                )));
            }
        }
        // Every prefix reachable with positive probability and room to grow
        // must carry a distribution.
        let mut frontier = vec![String::new()];
        while let Some(state) = frontier.pop() {
            let depth = state_tokens(&state).len();
            if depth >= self.max_len {
                continue;
            }
            let dist = self
                .table
                .get(&state)
                .ok_or_else(|| BackendError::IncompleteTable {
                    state: state.clone(),
                })?;
            for (token, &p) in dist {
                if p > 0.0 && token != &self.end_marker {
                    frontier.push(push_token(&state, token));
                }
            }
        }
        Ok(())
    }

    /// Uniformly random fully-specified spec for property tests: every
    /// reachable state draws a normalized distribution over a random subset
    /// of content tokens plus the end marker.
    pub fn random(rng: &mut impl Rng, vocab_size: usize, max_len: usize) -> ToyLmSpec {
        let content: Vec<String> = (0..vocab_size).map(|i| format!("t{i}")).collect();
        let end_marker = default_end_marker();
        let mut vocabulary = content.clone();
        vocabulary.push(end_marker.clone());

        let mut table = BTreeMap::new();
        let mut frontier = vec![String::new()];
        while let Some(state) = frontier.pop() {
            let depth = state_tokens(&state).len();
            if depth >= max_len {
                continue;
            }
            let mut dist = BTreeMap::new();
            let mut weights: Vec<(String, f64)> = Vec::new();
            for token in &content {
                if rng.gen_bool(0.7) {
                    weights.push((token.clone(), rng.gen_range(0.05..1.0)));
                }
            }
            // The end marker always keeps some mass so every state can
            // terminate and prefix probabilities stay spread out.
            weights.push((end_marker.clone(), rng.gen_range(0.05..1.0)));
            let total: f64 = weights.iter().map(|(_, w)| w).sum();
            for (token, w) in weights {
                dist.insert(token, w / total);
            }
            for (token, &p) in &dist {
                if p > 0.0 && token != &end_marker {
                    frontier.push(push_token(&state, token));
                }
            }
            table.insert(state, dist);
        }

        ToyLmSpec {
            name: "toy-random".to_string(),
            vocabulary,
            end_marker,
            max_len,
            table,
        }
    }
}

fn state_tokens(state: &str) -> Vec<&str> {
    if state.is_empty() {
        Vec::new()
    } else {
        state.split(' ').collect()
    }
}

fn push_token(state: &str, token: &str) -> String {
    if state.is_empty() {
        token.to_string()
    } else {
        format!("{state} {token}")
    }
}

fn join_tokens(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Exact oracle backend over a validated [`ToyLmSpec`].
#[derive(Debug, Clone)]
pub struct ToyLm {
    spec: ToyLmSpec,
    vocab: BTreeSet<String>,
    model_id: String,
    /// Total probability of complete sequences per boundary prefix, built
    /// once by exhaustive enumeration (never by the chain-rule walk that
    /// [`Backend::score_continuation`] uses).
    prefix_mass: std::sync::OnceLock<std::collections::HashMap<Vec<String>, f64>>,
}

impl ToyLm {
    pub fn new(spec: ToyLmSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        let vocab = spec.vocabulary.iter().cloned().collect();
        let model_id = format!("toy:{}", spec.name);
        Ok(Self {
            spec,
            vocab,
            model_id,
            prefix_mass: std::sync::OnceLock::new(),
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, BackendError> {
        Self::new(ToyLmSpec::from_file(path)?)
    }

    pub fn spec(&self) -> &ToyLmSpec {
        &self.spec
    }

    /// Tokenizes a context or continuation string, requiring every word to
    /// be a content token of the vocabulary.
    fn words(&self, s: &str) -> Result<Vec<String>, BackendError> {
        whitespace_chunks(s)
            .iter()
            .map(|chunk| {
                let word = chunk.trim();
                if word.is_empty() || !self.vocab.contains(word) || word == self.spec.end_marker {
                    Err(BackendError::NotRepresentable {
                        token: chunk.clone(),
                    })
                } else {
                    Ok(word.to_string())
                }
            })
            .collect()
    }

    fn next_prob(&self, state: &[String], token: &str) -> f64 {
        if state.len() >= self.spec.max_len {
            return 0.0;
        }
        self.spec
            .table
            .get(&join_tokens(state))
            .and_then(|dist| dist.get(token))
            .copied()
            .unwrap_or(0.0)
    }

    // ---- brute-force enumeration -------------------------------------------

    /// All complete token sequences of the model with their probabilities,
    /// by depth-first walk of the table.
    pub fn complete_sequences(&self) -> Vec<(Vec<String>, f64)> {
        let mut out = Vec::new();
        let mut path: Vec<String> = Vec::new();
        self.walk(&mut path, 1.0, &mut out);
        out
    }

    fn walk(&self, path: &mut Vec<String>, mass: f64, out: &mut Vec<(Vec<String>, f64)>) {
        if mass == 0.0 {
            return;
        }
        if path.len() >= self.spec.max_len {
            out.push((path.clone(), mass));
            return;
        }
        let dist = match self.spec.table.get(&join_tokens(path)) {
            Some(dist) => dist,
            None => {
                // Unreachable under a validated spec, but keep the walk total.
                out.push((path.clone(), mass));
                return;
            }
        };
        for (token, &p) in dist {
            if p == 0.0 {
                continue;
            }
            if token == &self.spec.end_marker {
                out.push((path.clone(), mass * p));
            } else {
                path.push(token.clone());
                self.walk(path, mass * p, out);
                path.pop();
            }
        }
    }

    fn prefix_mass_map(&self) -> &std::collections::HashMap<Vec<String>, f64> {
        self.prefix_mass.get_or_init(|| {
            let mut map: std::collections::HashMap<Vec<String>, f64> =
                std::collections::HashMap::new();
            for (seq, p) in self.complete_sequences() {
                for cut in 0..=seq.len() {
                    *map.entry(seq[..cut].to_vec()).or_insert(0.0) += p;
                }
            }
            map
        })
    }

    /// Probability that a generated sequence starts with `prefix`, summed
    /// over all complete sequences.
    pub fn prefix_prob_tokens(&self, prefix: &[String]) -> f64 {
        self.prefix_mass_map()
            .get(prefix)
            .copied()
            .unwrap_or(0.0)
    }

    /// Exact `P(target | prefix)` as the ratio of enumerated prefix masses.
    pub fn conditional_prob_tokens(
        &self,
        prefix: &[String],
        target: &[String],
    ) -> Result<f64, BackendError> {
        let prefix_mass = self.prefix_prob_tokens(prefix);
        if prefix_mass == 0.0 {
            return Err(BackendError::InvalidSpec(format!(
                "prefix {prefix:?} has zero probability"
            )));
        }
        let mut joined = prefix.to_vec();
        joined.extend_from_slice(target);
        Ok(self.prefix_prob_tokens(&joined) / prefix_mass)
    }

    /// All token-boundary prefixes with positive probability, including the
    /// empty prefix.
    pub fn reachable_prefixes(&self) -> Vec<Vec<String>> {
        let mut prefixes: Vec<Vec<String>> = self.prefix_mass_map().keys().cloned().collect();
        prefixes.sort();
        prefixes
    }

    /// Marginal `P(target)`: the probability that `target` immediately
    /// follows a model-weighted random token boundary, i.e. the prefix-mass
    /// weighted average of `P(target | prefix)` over all reachable prefixes.
    pub fn marginal_prob_tokens(&self, target: &[String]) -> f64 {
        let prefixes = self.reachable_prefixes();
        let mut occurrence = 0.0;
        let mut total = 0.0;
        for prefix in &prefixes {
            let mut joined = prefix.clone();
            joined.extend_from_slice(target);
            occurrence += self.prefix_prob_tokens(&joined);
            total += self.prefix_prob_tokens(prefix);
        }
        occurrence / total
    }

    /// Posterior over contexts given the continuation, under the same joint
    /// as [`Self::marginal_prob_tokens`]: of all boundary positions followed
    /// by `target`, the share whose preceding prefix is exactly `context`.
    pub fn context_given_continuation_tokens(
        &self,
        context: &[String],
        target: &[String],
    ) -> Result<f64, BackendError> {
        let mut joined = context.to_vec();
        joined.extend_from_slice(target);
        let numerator = self.prefix_prob_tokens(&joined);
        let mut denominator = 0.0;
        for prefix in self.reachable_prefixes() {
            let mut p = prefix.clone();
            p.extend_from_slice(target);
            denominator += self.prefix_prob_tokens(&p);
        }
        if denominator == 0.0 {
            return Err(BackendError::InvalidSpec(format!(
                "continuation {target:?} never occurs"
            )));
        }
        Ok(numerator / denominator)
    }

    /// String-level enumeration: exact `P(target | prefix)` when a prefix is
    /// given, marginal `P(target)` over all prefixes otherwise.
    pub fn enumerate_sequence_prob(
        &self,
        prefix: Option<&str>,
        target: &str,
    ) -> Result<f64, BackendError> {
        let target_tokens = self.words(target)?;
        if target_tokens.len() > self.spec.max_len {
            return Err(BackendError::InvalidSpec(format!(
                "target has {} tokens, max_len is {}",
                target_tokens.len(),
                self.spec.max_len
            )));
        }
        match prefix {
            Some(p) => {
                let prefix_tokens = if p.is_empty() {
                    Vec::new()
                } else {
                    self.words(p)?
                };
                self.conditional_prob_tokens(&prefix_tokens, &target_tokens)
            }
            None => Ok(self.marginal_prob_tokens(&target_tokens)),
        }
    }
}

impl Backend for ToyLm {
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
        let chunks = whitespace_chunks(continuation);
        let mut state = if context.is_empty() {
            Vec::new()
        } else {
            self.words(context)?
        };
        let mut logprobs = Vec::with_capacity(chunks.len());
        for chunk in &chunks {
            let word = chunk.trim();
            if word.is_empty() || !self.vocab.contains(word) || word == self.spec.end_marker {
                return Err(BackendError::NotRepresentable {
                    token: chunk.clone(),
                });
            }
            let p = self.next_prob(&state, word);
            logprobs.push(if p > 0.0 { p.ln().min(0.0) } else { LOG_PROB_FLOOR });
            state.push(word.to_string());
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
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn two_state_spec() -> ToyLmSpec {
        // From empty state P(a)=0.5, P(b)=0.5; from "a" P(b)=1.0.
        ToyLmSpec {
            name: "two-state".into(),
            vocabulary: vec!["a".into(), "b".into(), "</s>".into()],
            end_marker: "</s>".into(),
            max_len: 2,
            table: BTreeMap::from([
                (
                    String::new(),
                    BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]),
                ),
                ("a".to_string(), BTreeMap::from([("b".to_string(), 1.0)])),
                ("b".to_string(), BTreeMap::from([("</s>".to_string(), 1.0)])),
                (
                    "a b".to_string(),
                    BTreeMap::from([("</s>".to_string(), 1.0)]),
                ),
            ]),
        }
    }

    fn uniform_binary_spec(depth: usize) -> ToyLmSpec {
        // Uniform over 2 content tokens at every state; no early stop.
        let mut table = BTreeMap::new();
        let mut frontier = vec![String::new()];
        while let Some(state) = frontier.pop() {
            if state_tokens(&state).len() >= depth {
                continue;
            }
            table.insert(
                state.clone(),
                BTreeMap::from([("x".to_string(), 0.5), ("y".to_string(), 0.5)]),
            );
            frontier.push(push_token(&state, "x"));
            frontier.push(push_token(&state, "y"));
        }
        ToyLmSpec {
            name: "uniform-binary".into(),
            vocabulary: vec!["x".into(), "y".into(), "</s>".into()],
            end_marker: "</s>".into(),
            max_len: depth,
            table,
        }
    }

    #[test]
    fn certain_transition_scores_zero_logprob() {
        let lm = ToyLm::new(two_state_spec()).unwrap();
        let score = lm.score_continuation("a", "b").unwrap();
        assert_eq!(score.logprobs.values(), &[0.0]);
    }

    #[test]
    fn uniform_continuation_scores_token_count_times_ln_half() {
        let lm = ToyLm::new(uniform_binary_spec(4)).unwrap();
        let score = lm.score_continuation("", "x y x").unwrap();
        let expected = 3.0 * 0.5f64.ln();
        assert!((score.logprobs.sum() - expected).abs() < 1e-12);
    }

    #[test]
    fn chain_of_certainties_enumerates_to_one() {
        let mut table = BTreeMap::new();
        table.insert(
            String::new(),
            BTreeMap::from([("a".to_string(), 1.0)]),
        );
        table.insert(
            "a".to_string(),
            BTreeMap::from([("b".to_string(), 1.0)]),
        );
        table.insert(
            "a b".to_string(),
            BTreeMap::from([("</s>".to_string(), 1.0)]),
        );
        let spec = ToyLmSpec {
            name: "chain".into(),
            vocabulary: vec!["a".into(), "b".into(), "</s>".into()],
            end_marker: "</s>".into(),
            max_len: 2,
            table,
        };
        let lm = ToyLm::new(spec).unwrap();
        assert_eq!(lm.enumerate_sequence_prob(Some(""), "a b").unwrap(), 1.0);
    }

    #[test]
    fn uniform_tree_leaf_has_probability_two_to_minus_depth() {
        let depth = 4;
        let lm = ToyLm::new(uniform_binary_spec(depth)).unwrap();
        let leaf = "x y y x";
        let p = lm.enumerate_sequence_prob(Some(""), leaf).unwrap();
        assert!((p - 2f64.powi(-(depth as i32))).abs() < 1e-15);
    }

    #[test]
    fn scoring_and_enumeration_agree_on_random_specs() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..5 {
            let spec = ToyLmSpec::random(&mut rng, 2, 4);
            let lm = ToyLm::new(spec).unwrap();
            for (seq, _) in lm.complete_sequences() {
                for cut in 0..seq.len() {
                    let prefix = seq[..cut].join(" ");
                    let target = seq[cut..].join(" ");
                    let scored = lm.score_continuation(&prefix, &target).unwrap();
                    let enumerated = lm
                        .enumerate_sequence_prob(Some(prefix.as_str()), &target)
                        .unwrap();
                    assert!(
                        (scored.logprobs.sum().exp() - enumerated).abs() < 1e-9,
                        "prefix {prefix:?} target {target:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn unknown_word_is_not_representable() {
        let lm = ToyLm::new(two_state_spec()).unwrap();
        assert!(matches!(
            lm.score_continuation("", "z"),
            Err(BackendError::NotRepresentable { .. })
        ));
    }

    #[test]
    fn zero_probability_token_hits_floor_not_error() {
        let lm = ToyLm::new(two_state_spec()).unwrap();
        // "a" cannot follow "a"; it is in-vocabulary, so the score floors.
        let score = lm.score_continuation("a", "a").unwrap();
        assert_eq!(score.logprobs.values(), &[LOG_PROB_FLOOR]);
    }

    #[test]
    fn incomplete_table_is_rejected() {
        let mut spec = two_state_spec();
        spec.table.remove("a");
        assert!(matches!(
            ToyLm::new(spec),
            Err(BackendError::IncompleteTable { .. })
        ));
    }

    #[test]
    fn unnormalized_distribution_is_rejected() {
        let mut spec = two_state_spec();
        spec.table
            .get_mut("")
            .unwrap()
            .insert("a".to_string(), 0.6);
        assert!(matches!(
            ToyLm::new(spec),
            Err(BackendError::InvalidSpec(_))
        ));
    }

    #[test]
    fn determinism_bit_identical_scores() {
        let mut rng = StdRng::seed_from_u64(11);
        let spec = ToyLmSpec::random(&mut rng, 3, 4);
        let lm = ToyLm::new(spec.clone()).unwrap();
        let lm2 = ToyLm::new(spec).unwrap();
        let a = lm.score_continuation("t0", "t1 t2").unwrap();
        let b = lm2.score_continuation("t0", "t1 t2").unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.logprobs.values().to_vec(),
            b.logprobs.values().to_vec()
        );
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = two_state_spec();
        let json = serde_json::to_string(&spec).unwrap();
        let back = ToyLmSpec::from_json(&json).unwrap();
        assert_eq!(back.table, spec.table);
        assert_eq!(back.max_len, spec.max_len);
    }
}
