//! Pure scoring functions over per-option log-probability evidence.
//!
//! All log-probabilities are natural log. Scores are comparable only within
//! one strategy and one instance; selection is by maximum value with ties
//! broken toward the lowest option index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Finite sentinel for a backend-reported probability of zero.
///
/// Backends map `P = 0` to this floor instead of `-inf` so that differences
/// of log-probabilities (e.g. the PMI numerator minus denominator) stay
/// finite and NaN-free.
pub const LOG_PROB_FLOOR: f64 = -1e9;

/// Slack above zero tolerated for per-token log-probabilities, to absorb
/// backend rounding of near-certain tokens.
const LOG_PROB_ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("empty hypothesis")]
    EmptyHypothesis,
    #[error("tokenization drift: conditional has {conditional} tokens, domain-conditional has {domain_conditional}")]
    TokenizationDrift {
        conditional: usize,
        domain_conditional: usize,
    },
    #[error("missing domain-conditional evidence for option {option_index}")]
    MissingDomainEvidence { option_index: usize },
    #[error("log-probability at index {index} is {value}, expected finite and <= 0")]
    InvalidLogProb { index: usize, value: f64 },
    #[error("CC requires closed label set")]
    OpenLabelSet,
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("raw probability for label {label:?} is {value}, expected > 0")]
    NonPositiveProbability { label: String, value: f64 },
    #[error("calibration scale for label {label:?} is {value}, expected > 0")]
    NonPositiveScale { label: String, value: f64 },
    #[error("cannot select from an empty score list")]
    EmptyScoreList,
    #[error("mixed strategies in one selection: {0:?} and {1:?}")]
    MixedStrategies(Strategy, Strategy),
}

/// Ordered per-token log-probabilities (natural log) of one continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    values: Vec<f64>,
}

impl TokenLogProbs {
    /// Validates that every value is finite (the floor sentinel is finite)
    /// and non-positive up to rounding slack. NaN and infinities are
    /// rejected; backends are responsible for flooring zero probabilities.
    pub fn new(values: Vec<f64>) -> Result<Self, ScoringError> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value > LOG_PROB_ROUNDING_SLACK {
                return Err(ScoringError::InvalidLogProb { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn token_count(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total log-probability of the continuation (chain-rule sum).
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Per-hypothesis bundle of conditional and domain-conditional token
/// log-probabilities.
///
/// `domain_conditional` is populated only when a requested strategy needs it;
/// the harness issues at most two scoring calls per option and skips the
/// domain-conditional call when neither `Unc` nor `PMI_DC` is selected.
#[derive(Debug, Clone)]
pub struct OptionEvidence {
    pub conditional: TokenLogProbs,
    pub domain_conditional: Option<TokenLogProbs>,
    pub option_index: usize,
}

impl OptionEvidence {
    pub fn new(
        conditional: TokenLogProbs,
        domain_conditional: Option<TokenLogProbs>,
        option_index: usize,
    ) -> Self {
        Self {
            conditional,
            domain_conditional,
            option_index,
        }
    }

    fn domain(&self) -> Result<&TokenLogProbs, ScoringError> {
        self.domain_conditional
            .as_ref()
            .ok_or(ScoringError::MissingDomainEvidence {
                option_index: self.option_index,
            })
    }
}

/// The scoring strategies under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// In-domain unconditional baseline: log P(y | x_domain).
    Unc,
    /// Raw conditional probability: log P(y | x).
    Lm,
    /// Length-normalized conditional: log P(y | x) / token count.
    Avg,
    /// Domain-conditional PMI: log P(y | x) - log P(y | x_domain).
    PmiDc,
    /// Contextual calibration: affine rescoring of label probabilities.
    Cc,
    /// Scoring-by-premise on flipped instances: log P(x | y) realized as the
    /// conditional of a fixed continuation under per-option contexts.
    PremiseLm,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Unc,
        Strategy::Lm,
        Strategy::Avg,
        Strategy::PmiDc,
        Strategy::Cc,
        Strategy::PremiseLm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Unc => "unc",
            Strategy::Lm => "lm",
            Strategy::Avg => "avg",
            Strategy::PmiDc => "pmi_dc",
            Strategy::Cc => "cc",
            Strategy::PremiseLm => "premise_lm",
        }
    }

    /// Display name matching the tables in reports.
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Unc => "Unc",
            Strategy::Lm => "LM",
            Strategy::Avg => "Avg",
            Strategy::PmiDc => "PMI_DC",
            Strategy::Cc => "CC",
            Strategy::PremiseLm => "Premise_LM",
        }
    }

    pub fn parse(name: &str) -> Option<Strategy> {
        match name.to_ascii_lowercase().as_str() {
            "unc" => Some(Strategy::Unc),
            "lm" => Some(Strategy::Lm),
            "avg" => Some(Strategy::Avg),
            "pmi_dc" | "pmidc" | "pmi" => Some(Strategy::PmiDc),
            "cc" => Some(Strategy::Cc),
            "premise_lm" | "premise" => Some(Strategy::PremiseLm),
            _ => None,
        }
    }

    /// Whether the strategy reads the domain-conditional scoring call.
    pub fn needs_domain_conditional(&self) -> bool {
        matches!(self, Strategy::Unc | Strategy::PmiDc)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A strategy-tagged score in log domain (probability domain for `CC`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyScore {
    pub strategy: Strategy,
    pub value: f64,
}

impl StrategyScore {
    pub fn new(strategy: Strategy, value: f64) -> Self {
        Self { strategy, value }
    }
}

/// Per-label affine calibration weights fit from content-free inputs.
///
/// Scales are strictly positive; the bias is zero in the zero-shot
/// construction unless loaded from a weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationWeights {
    pub per_label_scale: BTreeMap<String, f64>,
    pub bias: BTreeMap<String, f64>,
}

impl CalibrationWeights {
    /// Diagonal weights `1 / p_cf(label)` with zero bias, from a content-free
    /// label distribution.
    pub fn from_content_free(p_cf: &BTreeMap<String, f64>) -> Result<Self, ScoringError> {
        let mut per_label_scale = BTreeMap::new();
        let mut bias = BTreeMap::new();
        for (label, &p) in p_cf {
            if !(p > 0.0) || !p.is_finite() {
                return Err(ScoringError::NonPositiveProbability {
                    label: label.clone(),
                    value: p,
                });
            }
            per_label_scale.insert(label.clone(), 1.0 / p);
            bias.insert(label.clone(), 0.0);
        }
        let weights = Self {
            per_label_scale,
            bias,
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        for (label, &scale) in &self.per_label_scale {
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(ScoringError::NonPositiveScale {
                    label: label.clone(),
                    value: scale,
                });
            }
        }
        let scale_labels: Vec<&String> = self.per_label_scale.keys().collect();
        let bias_labels: Vec<&String> = self.bias.keys().collect();
        if scale_labels != bias_labels {
            return Err(ScoringError::LabelMismatch(format!(
                "scale labels {scale_labels:?} != bias labels {bias_labels:?}"
            )));
        }
        Ok(())
    }

    pub fn labels(&self) -> impl Iterator<Item = &String> {
        self.per_label_scale.keys()
    }
}

/// Raw conditional probability: value = sum of conditional log-probs,
/// i.e. log P(y | x) by the chain rule.
pub fn score_lm(evidence: &OptionEvidence) -> Result<StrategyScore, ScoringError> {
    if evidence.conditional.is_empty() {
        return Err(ScoringError::EmptyHypothesis);
    }
    Ok(StrategyScore::new(Strategy::Lm, evidence.conditional.sum()))
}

/// Length-normalized log-likelihood: mean per-token conditional log-prob.
pub fn score_avg(evidence: &OptionEvidence) -> Result<StrategyScore, ScoringError> {
    if evidence.conditional.is_empty() {
        return Err(ScoringError::EmptyHypothesis);
    }
    let count = evidence.conditional.token_count() as f64;
    Ok(StrategyScore::new(
        Strategy::Avg,
        evidence.conditional.sum() / count,
    ))
}

/// Domain-conditional PMI: log P(y | x) - log P(y | x_domain).
///
/// A token-count mismatch between the two calls means the backend tokenized
/// the same continuation differently under the two contexts, which would
/// silently corrupt the difference; it is reported as drift instead.
pub fn score_pmi_dc(evidence: &OptionEvidence) -> Result<StrategyScore, ScoringError> {
    if evidence.conditional.is_empty() {
        return Err(ScoringError::EmptyHypothesis);
    }
    let domain = evidence.domain()?;
    if evidence.conditional.token_count() != domain.token_count() {
        return Err(ScoringError::TokenizationDrift {
            conditional: evidence.conditional.token_count(),
            domain_conditional: domain.token_count(),
        });
    }
    Ok(StrategyScore::new(
        Strategy::PmiDc,
        evidence.conditional.sum() - domain.sum(),
    ))
}

/// Unconditional in-domain baseline: log P(y | x_domain). Never reads the
/// premise.
pub fn score_unc(evidence: &OptionEvidence) -> Result<StrategyScore, ScoringError> {
    let domain = evidence.domain()?;
    if domain.is_empty() {
        return Err(ScoringError::EmptyHypothesis);
    }
    Ok(StrategyScore::new(Strategy::Unc, domain.sum()))
}

/// Scoring-by-premise: the conditional log-probability of a fixed
/// continuation (the demoted premise) under this option's context. Only
/// meaningful on flipped instances, which the harness enforces.
pub fn score_premise_lm(evidence: &OptionEvidence) -> Result<StrategyScore, ScoringError> {
    if evidence.conditional.is_empty() {
        return Err(ScoringError::EmptyHypothesis);
    }
    Ok(StrategyScore::new(
        Strategy::PremiseLm,
        evidence.conditional.sum(),
    ))
}

/// Contextual calibration: `score(label) = raw(label) * scale(label) + bias(label)`.
///
/// Requires a closed label set; the label sets of the raw distribution and
/// the weights must match exactly.
pub fn score_cc(
    raw_label_probs: &BTreeMap<String, f64>,
    weights: &CalibrationWeights,
) -> Result<BTreeMap<String, StrategyScore>, ScoringError> {
    weights.validate()?;
    let raw_labels: Vec<&String> = raw_label_probs.keys().collect();
    let weight_labels: Vec<&String> = weights.per_label_scale.keys().collect();
    if raw_labels != weight_labels {
        return Err(ScoringError::LabelMismatch(format!(
            "raw labels {raw_labels:?} != calibration labels {weight_labels:?}"
        )));
    }
    let mut out = BTreeMap::new();
    for (label, &raw) in raw_label_probs {
        if !(raw > 0.0) || !raw.is_finite() {
            return Err(ScoringError::NonPositiveProbability {
                label: label.clone(),
                value: raw,
            });
        }
        let value = raw * weights.per_label_scale[label] + weights.bias[label];
        out.insert(label.clone(), StrategyScore::new(Strategy::Cc, value));
    }
    Ok(out)
}

/// Index of the maximum score; ties break toward the lowest index.
///
/// All scores must share one strategy and belong to one instance.
pub fn select(scores: &[StrategyScore]) -> Result<usize, ScoringError> {
    let first = scores.first().ok_or(ScoringError::EmptyScoreList)?;
    let mut best = 0usize;
    for (index, score) in scores.iter().enumerate() {
        if score.strategy != first.strategy {
            return Err(ScoringError::MixedStrategies(first.strategy, score.strategy));
        }
        if score.value > scores[best].value {
            best = index;
        }
    }
    Ok(best)
}

/// Selection over labeled CC scores, ordered by the given label order so the
/// tie-break stays the lowest option index.
pub fn select_labeled(
    scores: &BTreeMap<String, StrategyScore>,
    label_order: &[String],
) -> Result<usize, ScoringError> {
    if scores.len() != label_order.len() {
        return Err(ScoringError::LabelMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            label_order.len()
        )));
    }
    let mut ordered = Vec::with_capacity(label_order.len());
    for label in label_order {
        let score = scores
            .get(label)
            .ok_or_else(|| ScoringError::LabelMismatch(format!("no score for label {label:?}")))?;
        ordered.push(*score);
    }
    select(&ordered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    // The explicit import outranks proptest's glob-exported `Strategy` trait.
    use super::Strategy;

    fn logprobs(values: &[f64]) -> TokenLogProbs {
        TokenLogProbs::new(values.to_vec()).unwrap()
    }

    fn evidence(conditional: &[f64], domain: &[f64]) -> OptionEvidence {
        OptionEvidence::new(logprobs(conditional), Some(logprobs(domain)), 0)
    }

    #[test]
    fn lm_sums_conditional_values() {
        let ev = evidence(&[-1.0, -2.5], &[-1.0, -1.0]);
        assert_eq!(score_lm(&ev).unwrap().value, -3.5);
    }

    #[test]
    fn lm_prefers_short_option_with_higher_total() {
        let single = evidence(&[-6.0], &[-1.0]);
        let triple = evidence(&[-2.0, -2.0, -2.0], &[-1.0, -1.0, -1.0]);
        let scores = vec![score_lm(&single).unwrap(), score_lm(&triple).unwrap()];
        assert_eq!(select(&scores).unwrap(), 0, "-6.0 > -9.0");
    }

    #[test]
    fn lm_rejects_empty_continuation() {
        let ev = OptionEvidence::new(logprobs(&[]), None, 0);
        assert_eq!(score_lm(&ev), Err(ScoringError::EmptyHypothesis));
    }

    #[test]
    fn avg_is_mean_of_values() {
        let ev = evidence(&[-2.0, -4.0], &[-1.0, -1.0]);
        assert_eq!(score_avg(&ev).unwrap().value, -3.0);
    }

    #[test]
    fn avg_reverses_lm_on_length_mismatch() {
        let single = evidence(&[-6.0], &[-1.0]);
        let triple = evidence(&[-2.0, -2.0, -2.0], &[-1.0, -1.0, -1.0]);
        let scores = vec![score_avg(&single).unwrap(), score_avg(&triple).unwrap()];
        assert_eq!(select(&scores).unwrap(), 1, "-6.0 < -3.0 per token");
    }

    #[test]
    fn pmi_dc_is_difference_of_log_probs() {
        // Magnitudes on the scale of two paraphrases' observed conditionals.
        let ev = evidence(&[-16.0], &[-20.0]);
        assert_eq!(score_pmi_dc(&ev).unwrap().value, 4.0);
    }

    #[test]
    fn pmi_dc_of_independent_events_is_zero() {
        let ev = evidence(&[-3.0, -2.0], &[-4.0, -1.0]);
        assert_eq!(score_pmi_dc(&ev).unwrap().value, 0.0);
    }

    #[test]
    fn pmi_dc_detects_tokenization_drift() {
        let ev = OptionEvidence::new(
            logprobs(&[-1.0, -2.0]),
            Some(logprobs(&[-1.0, -1.0, -1.0])),
            0,
        );
        assert_eq!(
            score_pmi_dc(&ev),
            Err(ScoringError::TokenizationDrift {
                conditional: 2,
                domain_conditional: 3
            })
        );
    }

    #[test]
    fn pmi_dc_requires_domain_evidence() {
        let ev = OptionEvidence::new(logprobs(&[-1.0]), None, 3);
        assert_eq!(
            score_pmi_dc(&ev),
            Err(ScoringError::MissingDomainEvidence { option_index: 3 })
        );
    }

    #[test]
    fn unc_sums_domain_conditional_values() {
        let ev = evidence(&[-9.0, -9.0], &[-1.0, -1.0]);
        assert_eq!(score_unc(&ev).unwrap().value, -2.0);
    }

    #[test]
    fn unc_ignores_the_premise() {
        // Two instances sharing an option set and domain premise get
        // identical Unc scores for corresponding options.
        let instance_a = evidence(&[-1.0, -1.0], &[-2.0, -3.0]);
        let instance_b = evidence(&[-7.0, -4.0], &[-2.0, -3.0]);
        assert_eq!(
            score_unc(&instance_a).unwrap().value,
            score_unc(&instance_b).unwrap().value
        );
    }

    #[test]
    fn cc_affine_transform_can_overturn_raw_argmax() {
        // Content-free estimate [0.7, 0.3] gives scales [1/0.7, 1/0.3];
        // raw [0.6, 0.4] calibrates to [0.857.., 1.333..] and label 2 wins.
        let p_cf = BTreeMap::from([("l1".to_string(), 0.7), ("l2".to_string(), 0.3)]);
        let weights = CalibrationWeights::from_content_free(&p_cf).unwrap();
        let raw = BTreeMap::from([("l1".to_string(), 0.6), ("l2".to_string(), 0.4)]);
        let scores = score_cc(&raw, &weights).unwrap();
        assert!((scores["l1"].value - 0.6 / 0.7).abs() < 1e-12);
        assert!((scores["l2"].value - 0.4 / 0.3).abs() < 1e-12);
        let order = vec!["l1".to_string(), "l2".to_string()];
        assert_eq!(select_labeled(&scores, &order).unwrap(), 1);
    }

    #[test]
    fn cc_uniform_content_free_preserves_raw_argmax() {
        let p_cf = BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]);
        let weights = CalibrationWeights::from_content_free(&p_cf).unwrap();
        let raw = BTreeMap::from([("a".to_string(), 0.2), ("b".to_string(), 0.8)]);
        let scores = score_cc(&raw, &weights).unwrap();
        let order = vec!["a".to_string(), "b".to_string()];
        assert_eq!(select_labeled(&scores, &order).unwrap(), 1);
    }

    #[test]
    fn cc_rejects_label_mismatch() {
        let p_cf = BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]);
        let weights = CalibrationWeights::from_content_free(&p_cf).unwrap();
        let raw = BTreeMap::from([("a".to_string(), 0.2), ("c".to_string(), 0.8)]);
        assert!(matches!(
            score_cc(&raw, &weights),
            Err(ScoringError::LabelMismatch(_))
        ));
    }

    #[test]
    fn select_takes_maximum() {
        let scores: Vec<StrategyScore> = [-1.0, -2.0]
            .iter()
            .map(|&v| StrategyScore::new(Strategy::Lm, v))
            .collect();
        assert_eq!(select(&scores).unwrap(), 0);
        let scores: Vec<StrategyScore> = [-3.0, -1.0, -2.0]
            .iter()
            .map(|&v| StrategyScore::new(Strategy::Lm, v))
            .collect();
        assert_eq!(select(&scores).unwrap(), 1);
    }

    #[test]
    fn select_breaks_ties_toward_lowest_index() {
        let scores: Vec<StrategyScore> = [-1.0, -1.0]
            .iter()
            .map(|&v| StrategyScore::new(Strategy::Unc, v))
            .collect();
        assert_eq!(select(&scores).unwrap(), 0);
    }

    #[test]
    fn select_rejects_empty_and_mixed_lists() {
        assert_eq!(select(&[]), Err(ScoringError::EmptyScoreList));
        let mixed = vec![
            StrategyScore::new(Strategy::Lm, -1.0),
            StrategyScore::new(Strategy::Avg, -1.0),
        ];
        assert!(matches!(
            select(&mixed),
            Err(ScoringError::MixedStrategies(_, _))
        ));
    }

    #[test]
    fn token_log_probs_rejects_nan_and_positive_values() {
        assert!(TokenLogProbs::new(vec![f64::NAN]).is_err());
        assert!(TokenLogProbs::new(vec![f64::NEG_INFINITY]).is_err());
        assert!(TokenLogProbs::new(vec![0.5]).is_err());
        assert!(TokenLogProbs::new(vec![0.0, LOG_PROB_FLOOR]).is_ok());
    }

    proptest! {
        /// Adding a constant to every score leaves select() unchanged.
        #[test]
        fn select_is_shift_invariant(
            values in proptest::collection::vec(-50.0f64..0.0, 1..8),
            shift in -10.0f64..10.0,
        ) {
            let scores: Vec<StrategyScore> = values
                .iter()
                .map(|&v| StrategyScore::new(Strategy::Lm, v))
                .collect();
            let shifted: Vec<StrategyScore> = values
                .iter()
                .map(|&v| StrategyScore::new(Strategy::Lm, v + shift))
                .collect();
            prop_assert_eq!(select(&scores).unwrap(), select(&shifted).unwrap());
        }

        /// For single-token options, Avg selection equals LM selection.
        #[test]
        fn single_token_avg_equals_lm(
            values in proptest::collection::vec(-50.0f64..0.0, 1..8),
        ) {
            let evidences: Vec<OptionEvidence> = values
                .iter()
                .map(|&v| OptionEvidence::new(
                    TokenLogProbs::new(vec![v]).unwrap(),
                    None,
                    0,
                ))
                .collect();
            let lm: Vec<StrategyScore> =
                evidences.iter().map(|e| score_lm(e).unwrap()).collect();
            let avg: Vec<StrategyScore> =
                evidences.iter().map(|e| score_avg(e).unwrap()).collect();
            prop_assert_eq!(select(&lm).unwrap(), select(&avg).unwrap());
        }

        /// PMI_DC equals LM minus Unc on the same evidence.
        #[test]
        fn pmi_dc_equals_lm_minus_unc(
            cond in proptest::collection::vec(-50.0f64..0.0, 1..8),
            dom_offsets in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let dom: Vec<f64> = cond
                .iter()
                .zip(&dom_offsets)
                .map(|(&c, &o)| (c + o).min(0.0))
                .collect();
            let ev = evidence(&cond, &dom);
            let pmi = score_pmi_dc(&ev).unwrap().value;
            let lm = score_lm(&ev).unwrap().value;
            let unc = score_unc(&ev).unwrap().value;
            prop_assert!((pmi - (lm - unc)).abs() <= 1e-12);
        }

        /// CC with all scales equal preserves LM argmax.
        #[test]
        fn cc_equal_scales_preserve_argmax(
            probs in proptest::collection::vec(1e-6f64..1.0, 2..6),
            scale in 0.1f64..10.0,
        ) {
            let labels: Vec<String> =
                (0..probs.len()).map(|i| format!("label{i}")).collect();
            let raw: BTreeMap<String, f64> =
                labels.iter().cloned().zip(probs.iter().copied()).collect();
            let weights = CalibrationWeights {
                per_label_scale: labels.iter().cloned().map(|l| (l, scale)).collect(),
                bias: labels.iter().cloned().map(|l| (l, 0.0)).collect(),
            };
            let scores = score_cc(&raw, &weights).unwrap();
            let selected = select_labeled(&scores, &labels).unwrap();
            let raw_scores: Vec<StrategyScore> = labels
                .iter()
                .map(|l| StrategyScore::new(Strategy::Cc, raw[l]))
                .collect();
            prop_assert_eq!(selected, select(&raw_scores).unwrap());
        }
    }
}
