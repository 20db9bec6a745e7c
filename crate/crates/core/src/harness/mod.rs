//! Orchestration: scoring datasets under selected strategies and backends,
//! accuracy aggregation, the flipped-scoring ablation, and content-free
//! calibration fitting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::scoring::{
    score_avg, score_lm, score_pmi_dc, score_premise_lm, score_unc, select, select_labeled,
    CalibrationWeights, OptionEvidence, ScoringError, Strategy, StrategyScore, TokenLogProbs,
};
use crate::task::{
    build_fewshot_block, copa_flip, render, sample_fewshot, FewShotConfig, Instance, TaskError,
    Template,
};

pub mod report;
pub mod sfc_lab;
pub mod sweep;
pub mod wins;

pub use report::{EvalReport, InstanceError, InstanceRecord, StrategyOutcome};
pub use sfc_lab::{run_sfc_lab, SfcLabReport, SfcLabSpec};
pub use sweep::{sweep, SweepReport};
pub use wins::{aggregate_wins, wins_input_from_reports, DatasetAccuracies, WinsTable};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(
        "errored instances exceed threshold: {errored}/{total} ({frac:.4} > {max_frac:.4})"
    )]
    ErrorThreshold {
        errored: usize,
        total: usize,
        frac: f64,
        max_frac: f64,
    },
    #[error("inconsistent strategy sets: {0}")]
    InconsistentStrategies(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parameters of one evaluation run. Dataset, template, and backend are
/// passed alongside so the same settings can drive sweeps over templates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSettings {
    pub strategies: Vec<Strategy>,
    pub seed: u64,
    pub parallelism: usize,
    /// Run fails when the errored-instance fraction exceeds this.
    pub max_error_frac: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fewshot: Option<FewShotConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cc_weights: Option<CalibrationWeights>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Unc, Strategy::Lm, Strategy::Avg, Strategy::PmiDc],
            seed: 0,
            parallelism: 1,
            max_error_frac: 0.01,
            fewshot: None,
            cc_weights: None,
        }
    }
}

impl RunSettings {
    fn validate(&self, instances: &[Instance], template: &Template) -> Result<(), HarnessError> {
        if self.strategies.is_empty() {
            return Err(HarnessError::Config("no strategies selected".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for strategy in &self.strategies {
            if !seen.insert(*strategy) {
                return Err(HarnessError::Config(format!(
                    "strategy {strategy} selected twice"
                )));
            }
        }
        if self.parallelism < 1 {
            return Err(HarnessError::Config("parallelism must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_error_frac) {
            return Err(HarnessError::Config(
                "max_error_frac must be in [0, 1]".into(),
            ));
        }
        if instances.is_empty() {
            return Err(HarnessError::Config("empty dataset".into()));
        }
        if self.strategies.contains(&Strategy::Cc) {
            if template.closed_label_set.is_none() {
                return Err(HarnessError::Config(
                    "CC requires closed label set".into(),
                ));
            }
            if self.cc_weights.is_none() {
                return Err(HarnessError::Config(
                    "CC requires calibration weights; run calibrate first".into(),
                ));
            }
            if instances.iter().any(|i| i.flipped) {
                return Err(HarnessError::Config(
                    "CC is not applicable to flipped instances".into(),
                ));
            }
        }
        if self.strategies.contains(&Strategy::PremiseLm)
            && instances.iter().any(|i| !i.flipped)
        {
            return Err(HarnessError::Config(
                "premise_lm scores fixed continuations and requires flipped instances".into(),
            ));
        }
        Ok(())
    }
}

struct ScoredInstance {
    record: Result<InstanceRecord, InstanceError>,
}

/// Scores every instance under the requested strategies and aggregates
/// accuracies. Per-option evidence costs at most two backend calls; the
/// domain-conditional call is skipped when no selected strategy reads it.
/// Errored instances are excluded from accuracy and surfaced in the report;
/// the run fails when their fraction exceeds `settings.max_error_frac`.
pub fn evaluate(
    instances: &[Instance],
    template: &Template,
    backend: &(dyn Backend + Sync),
    settings: &RunSettings,
) -> Result<EvalReport, HarnessError> {
    settings.validate(instances, template)?;

    // One exemplar draw per run, shared across instances; one spare lets an
    // instance drop itself from its own exemplars.
    let exemplars = match &settings.fewshot {
        Some(cfg) if cfg.k > 0 => {
            let mut draw = cfg.clone();
            draw.seed = cfg.seed.wrapping_add(settings.seed);
            let eligible = instances
                .iter()
                .filter(|i| cfg.source_split.is_empty() || i.split == cfg.source_split)
                .count();
            draw.k = (cfg.k + 1).min(eligible);
            sample_fewshot(instances, &draw)?
        }
        _ => Vec::new(),
    };

    let needs_domain = settings
        .strategies
        .iter()
        .any(Strategy::needs_domain_conditional);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;

    let scored: Vec<ScoredInstance> = pool.install(|| {
        use rayon::prelude::*;
        instances
            .par_iter()
            .map(|instance| ScoredInstance {
                record: score_instance(
                    instance,
                    template,
                    backend,
                    settings,
                    &exemplars,
                    needs_domain,
                ),
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for scored_instance in scored {
        match scored_instance.record {
            Ok(record) => records.push(record),
            Err(error) => errors.push(error),
        }
    }
    // Report assembly is order-independent of worker scheduling.
    records.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    errors.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));

    let total = instances.len();
    let errored = errors.len();
    let frac = errored as f64 / total as f64;
    if frac > settings.max_error_frac {
        return Err(HarnessError::ErrorThreshold {
            errored,
            total,
            frac,
            max_frac: settings.max_error_frac,
        });
    }

    let mut accuracy = BTreeMap::new();
    for strategy in &settings.strategies {
        let correct = records
            .iter()
            .filter(|r| r.per_strategy[strategy].correct)
            .count();
        accuracy.insert(*strategy, correct as f64 / records.len().max(1) as f64);
    }

    let first = &instances[0];
    Ok(EvalReport {
        schema_version: report::SCHEMA_VERSION,
        model_id: backend.model_id().to_string(),
        dataset_id: first.dataset_id.clone(),
        split: first.split.clone(),
        template_id: template.id.clone(),
        template_version: template.version,
        seed: settings.seed,
        strategies: settings.strategies.clone(),
        n_instances: total,
        n_scored: records.len(),
        n_errored: errored,
        accuracy,
        records,
        errors,
        started_at_unix_ms: now_ms(),
        finished_at_unix_ms: now_ms(),
    })
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn instance_error(instance: &Instance, message: impl std::fmt::Display) -> InstanceError {
    InstanceError {
        instance_id: instance.instance_id.clone(),
        message: message.to_string(),
    }
}

fn score_instance(
    instance: &Instance,
    template: &Template,
    backend: &(dyn Backend + Sync),
    settings: &RunSettings,
    exemplars: &[Instance],
    needs_domain: bool,
) -> Result<InstanceRecord, InstanceError> {
    let gold = instance
        .gold
        .ok_or_else(|| instance_error(instance, "missing gold label"))?;

    let block = match &settings.fewshot {
        Some(cfg) if cfg.k > 0 => build_fewshot_block(
            exemplars,
            template,
            &cfg.separator,
            cfg.k,
            &instance.instance_id,
        )
        .map_err(|e| instance_error(instance, e))?,
        _ => None,
    };

    let rendered =
        render(instance, template, block.as_deref()).map_err(|e| instance_error(instance, e))?;

    let mut evidences: Vec<OptionEvidence> = Vec::with_capacity(rendered.len());
    for option in &rendered {
        let conditional = backend
            .score_continuation(&option.conditional_context, &option.hypothesis)
            .map_err(|e| instance_error(instance, format!("option {}: {e}", option.option_index)))?;
        let domain_conditional: Option<TokenLogProbs> = if needs_domain {
            let domain = backend
                .score_continuation(&option.domain_context, &option.hypothesis)
                .map_err(|e| {
                    instance_error(instance, format!("option {} (domain): {e}", option.option_index))
                })?;
            Some(domain.logprobs)
        } else {
            None
        };
        evidences.push(OptionEvidence::new(
            conditional.logprobs,
            domain_conditional,
            option.option_index,
        ));
    }

    let mut per_strategy = BTreeMap::new();
    for strategy in &settings.strategies {
        let outcome = match strategy {
            Strategy::Cc => {
                score_instance_cc(instance, template, settings, &evidences)
                    .map_err(|e| instance_error(instance, e))?
            }
            _ => {
                let scores: Result<Vec<StrategyScore>, ScoringError> = evidences
                    .iter()
                    .map(|evidence| match strategy {
                        Strategy::Lm => score_lm(evidence),
                        Strategy::Avg => score_avg(evidence),
                        Strategy::PmiDc => score_pmi_dc(evidence),
                        Strategy::Unc => score_unc(evidence),
                        Strategy::PremiseLm => score_premise_lm(evidence),
                        Strategy::Cc => unreachable!(),
                    })
                    .collect();
                let scores = scores.map_err(|e| instance_error(instance, e))?;
                let selected = select(&scores).map_err(|e| instance_error(instance, e))?;
                StrategyOutcome {
                    scores: scores.iter().map(|s| s.value).collect(),
                    selected,
                    correct: selected == gold,
                }
            }
        };
        per_strategy.insert(*strategy, outcome);
    }

    Ok(InstanceRecord {
        instance_id: instance.instance_id.clone(),
        gold,
        per_strategy,
    })
}

fn score_instance_cc(
    instance: &Instance,
    template: &Template,
    settings: &RunSettings,
    evidences: &[OptionEvidence],
) -> Result<StrategyOutcome, HarnessError> {
    let labels = template
        .closed_label_set
        .as_ref()
        .ok_or_else(|| HarnessError::Config("CC requires closed label set".into()))?;
    let weights = settings
        .cc_weights
        .as_ref()
        .ok_or_else(|| HarnessError::Config("CC requires calibration weights".into()))?;
    let mut sorted_options = instance.options.clone();
    sorted_options.sort();
    let mut sorted_labels = labels.clone();
    sorted_labels.sort();
    if sorted_options != sorted_labels {
        return Err(HarnessError::Scoring(ScoringError::LabelMismatch(format!(
            "instance options {:?} do not form the closed label set {labels:?}",
            instance.options
        ))));
    }
    let gold = instance.gold.expect("checked by caller");
    let mut raw = BTreeMap::new();
    for (option, evidence) in instance.options.iter().zip(evidences) {
        // exp of the chain-rule sum; clamped to stay positive after flooring.
        let p = evidence.conditional.sum().exp().max(f64::MIN_POSITIVE);
        raw.insert(option.clone(), p);
    }
    let calibrated = crate::scoring::score_cc(&raw, weights)?;
    let selected = select_labeled(&calibrated, &instance.options)?;
    Ok(StrategyOutcome {
        scores: instance
            .options
            .iter()
            .map(|option| calibrated[option].value)
            .collect(),
        selected,
        correct: selected == gold,
    })
}

/// Paired original/flipped evaluation for the scoring-by-premise ablation.
#[derive(Debug, Serialize)]
pub struct FlipReport {
    pub original: EvalReport,
    pub flipped: EvalReport,
    /// Fraction of flipped instances on which every selected continuation
    /// strategy (LM, Avg, PMI_DC, premise scoring) picked the same option.
    pub flipped_selection_identity: f64,
    /// Per-strategy fraction of flipped instances agreeing with LM.
    pub flipped_agreement_with_lm: BTreeMap<Strategy, f64>,
}

/// Runs the paired ablation: the original dataset under the requested
/// strategies (minus premise scoring) and the flipped dataset with per-option
/// contexts and one fixed continuation.
pub fn evaluate_flipped(
    instances: &[Instance],
    template: &Template,
    backend: &(dyn Backend + Sync),
    settings: &RunSettings,
) -> Result<FlipReport, HarnessError> {
    if settings.strategies.contains(&Strategy::Cc) {
        return Err(HarnessError::Config(
            "CC is not applicable to the flipped ablation".into(),
        ));
    }
    let flipped: Result<Vec<Instance>, TaskError> = instances.iter().map(copa_flip).collect();
    let flipped = flipped?;

    let mut original_settings = settings.clone();
    original_settings
        .strategies
        .retain(|s| *s != Strategy::PremiseLm);
    if original_settings.strategies.is_empty() {
        return Err(HarnessError::Config(
            "flip-eval needs at least one non-premise strategy".into(),
        ));
    }
    let original_report = evaluate(instances, template, backend, &original_settings)?;
    let flipped_report = evaluate(&flipped, template, backend, settings)?;

    let identity_strategies: Vec<Strategy> = settings
        .strategies
        .iter()
        .copied()
        .filter(|s| {
            matches!(
                s,
                Strategy::Lm | Strategy::Avg | Strategy::PmiDc | Strategy::PremiseLm
            )
        })
        .collect();
    let mut identical = 0usize;
    let mut agreement: BTreeMap<Strategy, usize> = BTreeMap::new();
    for record in &flipped_report.records {
        let selections: Vec<usize> = identity_strategies
            .iter()
            .map(|s| record.per_strategy[s].selected)
            .collect();
        if selections.windows(2).all(|w| w[0] == w[1]) {
            identical += 1;
        }
        if let Some(lm) = record.per_strategy.get(&Strategy::Lm) {
            for (strategy, outcome) in &record.per_strategy {
                if outcome.selected == lm.selected {
                    *agreement.entry(*strategy).or_insert(0) += 1;
                }
            }
        }
    }
    let n = flipped_report.records.len().max(1) as f64;
    Ok(FlipReport {
        flipped_selection_identity: identical as f64 / n,
        flipped_agreement_with_lm: agreement
            .into_iter()
            .map(|(s, c)| (s, c as f64 / n))
            .collect(),
        original: original_report,
        flipped: flipped_report,
    })
}

/// Content-free inputs used to fit the zero-shot calibration weights.
pub const DEFAULT_CONTENT_FREE_INPUTS: [&str; 3] = ["N/A", "", "[MASK]"];

/// Fits diagonal calibration weights so the mean label distribution induced
/// by the content-free inputs becomes uniform: every premise slot of the
/// template is filled with each content-free string, the label hypotheses
/// are scored, and the per-input distributions are normalized and averaged.
pub fn calibrate_content_free(
    template: &Template,
    backend: &(dyn Backend + Sync),
    content_free_inputs: &[String],
) -> Result<CalibrationWeights, HarnessError> {
    let labels = template.closed_label_set.as_ref().ok_or_else(|| {
        HarnessError::Config("CC requires closed label set".into())
    })?;
    if content_free_inputs.is_empty() {
        return Err(HarnessError::Config(
            "need at least one content-free input".into(),
        ));
    }
    let mut mean: BTreeMap<String, f64> =
        labels.iter().map(|l| (l.clone(), 0.0)).collect();
    for content_free in content_free_inputs {
        let instance = Instance {
            instance_id: format!("content-free:{content_free}"),
            premise_parts: crate::task::template::pattern_fields(&template.conditional_pattern)
                .into_iter()
                .map(|field| (field, content_free.clone()))
                .collect(),
            options: labels.clone(),
            gold: Some(0),
            relation: None,
            dataset_id: template.dataset_id.clone(),
            split: String::new(),
            flipped: false,
        };
        let rendered = render(&instance, template, None)?;
        let mut probs: BTreeMap<String, f64> = BTreeMap::new();
        for (label, option) in labels.iter().zip(&rendered) {
            let score =
                backend.score_continuation(&option.conditional_context, &option.hypothesis)?;
            probs.insert(
                label.clone(),
                score.logprobs.sum().exp().max(f64::MIN_POSITIVE),
            );
        }
        let total: f64 = probs.values().sum();
        for (label, p) in probs {
            *mean.get_mut(&label).unwrap() += p / total / content_free_inputs.len() as f64;
        }
    }
    Ok(CalibrationWeights::from_content_free(&mean)?)
}
