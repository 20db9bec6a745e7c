//! Synthetic surface-form-competition lab.
//!
//! A lab spec declares, per concept, the conditional probability mass of the
//! listed correct form, of unlisted competing paraphrases, and of listed
//! distractors, plus everyone's prior mass after the domain premise. The lab
//! realizes the spec as an exact toy model, evaluates raw-probability scoring
//! against domain-conditional PMI through the normal pipeline, and sweeps the
//! fraction of correct-concept mass diverted to paraphrases: as paraphrases
//! absorb conditional mass, raw probability starts losing to distractors
//! while the PMI ratio is unaffected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::toy::{ToyLm, ToyLmSpec};
use crate::scoring::Strategy;
use crate::task::template::OptionTransform;
use crate::task::{Instance, Template};

use super::{evaluate, HarnessError, RunSettings};

const SINK_TOKEN: &str = "~other";
const END_MARKER: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceForm {
    pub text: String,
    /// P(form | concept context)
    pub conditional: f64,
    /// P(form | domain premise)
    pub domain_prior: f64,
}

impl SurfaceForm {
    pub fn new(text: &str, conditional: f64, domain_prior: f64) -> Self {
        Self {
            text: text.to_string(),
            conditional,
            domain_prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    /// The single-token premise string conditioning this concept.
    pub context: String,
    /// The designated listed correct option.
    pub listed: SurfaceForm,
    /// Unlisted valid paraphrases competing for the concept's mass.
    pub paraphrases: Vec<SurfaceForm>,
    /// Listed wrong options.
    pub distractors: Vec<SurfaceForm>,
}

impl Concept {
    /// Total conditional mass of the correct concept (listed + paraphrases).
    pub fn concept_mass(&self) -> f64 {
        self.listed.conditional
            + self
                .paraphrases
                .iter()
                .map(|p| p.conditional)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfcLabSpec {
    pub domain_token: String,
    pub concepts: Vec<Concept>,
    /// Paraphrase-mass shares swept in the demonstration.
    pub sweep_points: Vec<f64>,
}

impl SfcLabSpec {
    /// Structural checks plus the competition condition: some concept must
    /// have an unlisted paraphrase outranking its listed option. Derived
    /// sweep points are exempt from the competition condition, since the
    /// sweep's zero end deliberately removes it.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !self.has_competition() {
            return Err(HarnessError::Config(
                "no competition: no concept has an unlisted paraphrase outranking its listed option"
                    .into(),
            ));
        }
        self.validate_structure()
    }

    fn has_competition(&self) -> bool {
        self.concepts.iter().any(|concept| {
            concept
                .paraphrases
                .iter()
                .any(|p| p.conditional > concept.listed.conditional)
        })
    }

    fn validate_structure(&self) -> Result<(), HarnessError> {
        if self.concepts.is_empty() {
            return Err(HarnessError::Config("lab spec has no concepts".into()));
        }
        let mut seen_forms = std::collections::BTreeSet::new();
        let mut domain_mass = 0.0;
        for concept in &self.concepts {
            let mut conditional_mass = 0.0;
            let forms = std::iter::once(&concept.listed)
                .chain(&concept.paraphrases)
                .chain(&concept.distractors);
            for form in forms {
                if form.text.split_whitespace().count() != 1 {
                    return Err(HarnessError::Config(format!(
                        "surface form {:?} must be a single token",
                        form.text
                    )));
                }
                if !seen_forms.insert(form.text.clone()) {
                    return Err(HarnessError::Config(format!(
                        "surface form {:?} appears twice across concepts",
                        form.text
                    )));
                }
                if !(0.0..=1.0).contains(&form.conditional)
                    || !(0.0..=1.0).contains(&form.domain_prior)
                {
                    return Err(HarnessError::Config(format!(
                        "form {:?} has probabilities outside [0, 1]",
                        form.text
                    )));
                }
                conditional_mass += form.conditional;
                domain_mass += form.domain_prior;
            }
            if conditional_mass > 1.0 + 1e-12 {
                return Err(HarnessError::Config(format!(
                    "concept {:?} conditional mass {conditional_mass} exceeds 1",
                    concept.name
                )));
            }
            if concept.distractors.is_empty() {
                return Err(HarnessError::Config(format!(
                    "concept {:?} lists no distractor options",
                    concept.name
                )));
            }
        }
        if domain_mass > 1.0 + 1e-12 {
            return Err(HarnessError::Config(format!(
                "domain prior mass {domain_mass} exceeds 1"
            )));
        }
        Ok(())
    }

    /// The bundled demonstration spec: four concepts with competing
    /// paraphrases; raw probability misranks half of them while the PMI
    /// ratio stays on the listed form throughout.
    pub fn default_spec() -> SfcLabSpec {
        SfcLabSpec {
            domain_token: "answer:".to_string(),
            concepts: vec![
                Concept {
                    name: "c1".into(),
                    context: "q1".into(),
                    listed: SurfaceForm::new("whirlpool-bath", 0.10, 0.02),
                    paraphrases: vec![SurfaceForm::new("bathtub", 0.40, 0.04)],
                    distractors: vec![SurfaceForm::new("puddle", 0.425, 0.2125)],
                },
                Concept {
                    name: "c2".into(),
                    context: "q2".into(),
                    listed: SurfaceForm::new("automobile", 0.30, 0.04),
                    paraphrases: vec![SurfaceForm::new("car", 0.18, 0.02)],
                    distractors: vec![SurfaceForm::new("bicycle", 0.26, 0.13)],
                },
                Concept {
                    name: "c3".into(),
                    context: "q3".into(),
                    listed: SurfaceForm::new("physician", 0.12, 0.03),
                    paraphrases: vec![SurfaceForm::new("doctor", 0.45, 0.045)],
                    distractors: vec![SurfaceForm::new("lawyer", 0.40, 0.20)],
                },
                Concept {
                    name: "c4".into(),
                    context: "q4".into(),
                    listed: SurfaceForm::new("sofa", 0.35, 0.04),
                    paraphrases: vec![SurfaceForm::new("couch", 0.10, 0.01)],
                    distractors: vec![SurfaceForm::new("table", 0.30, 0.15)],
                },
            ],
            sweep_points: (0..=10).map(|i| i as f64 * 0.05).collect(),
        }
    }

    /// Realizes the spec as an exact toy model. The root splits evenly over
    /// the concept contexts and the domain premise; each context state emits
    /// the declared conditionals with the remainder on a sink form.
    pub fn to_toy_spec(&self) -> Result<ToyLmSpec, HarnessError> {
        self.validate_structure()?;
        let mut vocabulary: Vec<String> = Vec::new();
        let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();

        let mut root = BTreeMap::new();
        let mut starters: Vec<String> = self
            .concepts
            .iter()
            .map(|concept| concept.context.clone())
            .collect();
        starters.push(self.domain_token.clone());
        let n = starters.len();
        let mut partial = 0.0;
        for (i, starter) in starters.iter().enumerate() {
            let p = if i + 1 == n {
                1.0 - partial
            } else {
                1.0 / n as f64
            };
            partial += p;
            root.insert(starter.clone(), p);
            vocabulary.push(starter.clone());
        }
        table.insert(String::new(), root);

        let terminal = |table: &mut BTreeMap<String, BTreeMap<String, f64>>, state: String| {
            table.insert(state, BTreeMap::from([(END_MARKER.to_string(), 1.0)]));
        };

        let mut domain_dist: BTreeMap<String, f64> = BTreeMap::new();
        let mut domain_mass = 0.0;
        for concept in &self.concepts {
            let mut dist: BTreeMap<String, f64> = BTreeMap::new();
            let mut mass = 0.0;
            let forms = std::iter::once(&concept.listed)
                .chain(&concept.paraphrases)
                .chain(&concept.distractors);
            for form in forms {
                dist.insert(form.text.clone(), form.conditional);
                mass += form.conditional;
                domain_dist.insert(form.text.clone(), form.domain_prior);
                domain_mass += form.domain_prior;
                if !vocabulary.contains(&form.text) {
                    vocabulary.push(form.text.clone());
                }
                terminal(&mut table, format!("{} {}", concept.context, form.text));
                terminal(&mut table, format!("{} {}", self.domain_token, form.text));
            }
            dist.insert(SINK_TOKEN.to_string(), 1.0 - mass);
            table.insert(concept.context.clone(), dist);
            terminal(&mut table, format!("{} {SINK_TOKEN}", concept.context));
        }
        domain_dist.insert(SINK_TOKEN.to_string(), 1.0 - domain_mass);
        table.insert(self.domain_token.clone(), domain_dist);
        terminal(&mut table, format!("{} {SINK_TOKEN}", self.domain_token));
        vocabulary.push(SINK_TOKEN.to_string());
        vocabulary.push(END_MARKER.to_string());

        Ok(ToyLmSpec {
            name: "sfc-lab".to_string(),
            vocabulary,
            end_marker: END_MARKER.to_string(),
            max_len: 2,
            table,
        })
    }

    /// One instance per concept: the listed form first (gold), then the
    /// distractors.
    pub fn instances(&self) -> Vec<Instance> {
        self.concepts
            .iter()
            .map(|concept| {
                let mut options = vec![concept.listed.text.clone()];
                options.extend(concept.distractors.iter().map(|d| d.text.clone()));
                Instance {
                    instance_id: concept.name.clone(),
                    premise_parts: BTreeMap::from([(
                        "premise".to_string(),
                        concept.context.clone(),
                    )]),
                    options,
                    gold: Some(0),
                    relation: None,
                    dataset_id: "sfc-lab".into(),
                    split: "lab".into(),
                    flipped: false,
                }
            })
            .collect()
    }

    pub fn template(&self) -> Template {
        Template {
            id: "sfc-lab".into(),
            version: 1,
            dataset_id: "sfc-lab".into(),
            conditional_pattern: "{premise}".into(),
            domain_premise: self.domain_token.clone(),
            option_transform: OptionTransform::default(),
            closed_label_set: None,
            joiner: " ".into(),
        }
    }

    /// The spec with share `s` of each concept's mass diverted from the
    /// listed form to its paraphrases (proportionally to their declared
    /// weights). Distractors and priors are untouched.
    pub fn with_paraphrase_share(&self, share: f64) -> Result<SfcLabSpec, HarnessError> {
        if !(0.0..=1.0).contains(&share) {
            return Err(HarnessError::Config(format!(
                "paraphrase share {share} outside [0, 1]"
            )));
        }
        let mut spec = self.clone();
        for concept in &mut spec.concepts {
            let mass = concept.concept_mass();
            concept.listed.conditional = mass * (1.0 - share);
            let weight_total: f64 = concept.paraphrases.iter().map(|p| p.conditional).sum();
            let uniform = 1.0 / concept.paraphrases.len().max(1) as f64;
            for paraphrase in &mut concept.paraphrases {
                let weight = if weight_total > 0.0 {
                    paraphrase.conditional / weight_total
                } else {
                    uniform
                };
                paraphrase.conditional = mass * share * weight;
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConceptAllocation {
    pub name: String,
    pub listed_conditional: f64,
    pub listed_prior: f64,
    pub listed_pmi_ratio: f64,
    pub best_distractor_conditional: f64,
    pub best_distractor_pmi_ratio: f64,
    pub paraphrase_conditional_mass: f64,
    pub lm_correct: bool,
    pub pmi_dc_correct: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPointReport {
    pub paraphrase_share: f64,
    pub lm_accuracy: f64,
    pub pmi_dc_accuracy: f64,
}

#[derive(Debug, Serialize)]
pub struct SfcLabReport {
    pub lm_accuracy: f64,
    pub pmi_dc_accuracy: f64,
    pub allocations: Vec<ConceptAllocation>,
    pub sweep: Vec<SweepPointReport>,
}

fn accuracies_for(spec: &SfcLabSpec) -> Result<(f64, f64, Vec<super::InstanceRecord>), HarnessError> {
    let toy = ToyLm::new(spec.to_toy_spec()?)?;
    let settings = RunSettings {
        strategies: vec![Strategy::Lm, Strategy::PmiDc],
        seed: 0,
        parallelism: 1,
        max_error_frac: 0.0,
        fewshot: None,
        cc_weights: None,
    };
    let report = evaluate(&spec.instances(), &spec.template(), &toy, &settings)?;
    Ok((
        report.accuracy[&Strategy::Lm],
        report.accuracy[&Strategy::PmiDc],
        report.records,
    ))
}

/// Runs the default-point evaluation and the paraphrase-mass sweep.
pub fn run_sfc_lab(spec: &SfcLabSpec) -> Result<SfcLabReport, HarnessError> {
    spec.validate()?;
    let (lm_accuracy, pmi_dc_accuracy, records) = accuracies_for(spec)?;

    let allocations = spec
        .concepts
        .iter()
        .map(|concept| {
            let record = records
                .iter()
                .find(|r| r.instance_id == concept.name)
                .expect("record per concept");
            let best_distractor = concept
                .distractors
                .iter()
                .max_by(|a, b| a.conditional.total_cmp(&b.conditional))
                .expect("validated non-empty");
            ConceptAllocation {
                name: concept.name.clone(),
                listed_conditional: concept.listed.conditional,
                listed_prior: concept.listed.domain_prior,
                listed_pmi_ratio: concept.listed.conditional / concept.listed.domain_prior,
                best_distractor_conditional: best_distractor.conditional,
                best_distractor_pmi_ratio: best_distractor.conditional
                    / best_distractor.domain_prior,
                paraphrase_conditional_mass: concept
                    .paraphrases
                    .iter()
                    .map(|p| p.conditional)
                    .sum(),
                lm_correct: record.per_strategy[&Strategy::Lm].correct,
                pmi_dc_correct: record.per_strategy[&Strategy::PmiDc].correct,
            }
        })
        .collect();

    let mut sweep = Vec::with_capacity(spec.sweep_points.len());
    for &share in &spec.sweep_points {
        let point_spec = spec.with_paraphrase_share(share)?;
        let (lm, pmi, _) = accuracies_for(&point_spec)?;
        sweep.push(SweepPointReport {
            paraphrase_share: share,
            lm_accuracy: lm,
            pmi_dc_accuracy: pmi,
        });
    }

    Ok(SfcLabReport {
        lm_accuracy,
        pmi_dc_accuracy,
        allocations,
        sweep,
    })
}
