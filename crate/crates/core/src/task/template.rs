//! Prompt templates: rendering rules producing the conditional context, the
//! domain premise, and the hypothesis string for each option.
//!
//! Patterns are literal text with `{field}` slots over the instance's named
//! premise parts. `{relation}` resolves to the instance's connective word;
//! the modifiers `{field|strip_period}` and `{field|strip_qmark}` drop one
//! trailing `.` or `?` so the pattern controls terminal punctuation. Every
//! bundled template keeps its domain premise a literal suffix of the rendered
//! conditional context.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::instance::Instance;
use super::TaskError;

/// Casing/punctuation rules applied to an option before it becomes a
/// hypothesis string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct OptionTransform {
    /// Lower-case the first character (COPA-style templates).
    #[serde(default)]
    pub lowercase_first: bool,
    /// Append a trailing period when the option lacks terminal punctuation.
    #[serde(default)]
    pub ensure_period: bool,
}

impl OptionTransform {
    pub fn apply(&self, option: &str) -> String {
        let mut text = if self.lowercase_first {
            lower_first(option)
        } else {
            option.to_string()
        };
        if self.ensure_period && !text.ends_with(['.', '!', '?', ':']) {
            text.push('.');
        }
        text
    }
}

pub(crate) fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub(crate) fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub version: u32,
    pub dataset_id: String,
    /// Pattern for the full conditional context `x`.
    pub conditional_pattern: String,
    /// The domain premise `x_domain`; may contain `{relation}`.
    pub domain_premise: String,
    #[serde(default)]
    pub option_transform: OptionTransform,
    /// Fixed label vocabulary for closed-set datasets; required for CC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_label_set: Option<Vec<String>>,
    /// Whitespace placed between a context and its hypothesis; attached to
    /// the hypothesis so both scoring calls see the identical continuation.
    #[serde(default = "default_joiner")]
    pub joiner: String,
}

fn default_joiner() -> String {
    " ".to_string()
}

/// One option rendered for scoring. The hypothesis (joiner included) is
/// byte-identical under both contexts, which is what lets the two scoring
/// calls share a tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedOption {
    pub conditional_context: String,
    pub domain_context: String,
    pub hypothesis: String,
    pub option_index: usize,
}

/// Premise field names referenced by a pattern (`{relation}` excluded).
pub fn pattern_fields(pattern: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        let slot = &rest[open + 1..open + close];
        rest = &rest[open + close + 1..];
        let field = slot.split_once('|').map(|(f, _)| f).unwrap_or(slot);
        if field != "relation" && !fields.iter().any(|f| f == field) {
            fields.push(field.to_string());
        }
    }
    fields
}

fn fill(
    pattern: &str,
    instance: &Instance,
) -> Result<String, TaskError> {
    let mut out = String::with_capacity(pattern.len());
    let mut missing = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let Some(close) = rest[open..].find('}') else {
            return Err(TaskError::Invalid(format!(
                "unclosed slot in pattern {pattern:?}"
            )));
        };
        let slot = &rest[open + 1..open + close];
        rest = &rest[open + close + 1..];
        let (field, modifier) = match slot.split_once('|') {
            Some((f, m)) => (f, Some(m)),
            None => (slot, None),
        };
        let value = if field == "relation" {
            match instance.relation {
                Some(relation) => Some(relation.word().to_string()),
                None => None,
            }
        } else {
            instance.premise_parts.get(field).cloned()
        };
        match value {
            Some(value) => {
                let value = match modifier {
                    Some("strip_period") => value.trim_end_matches('.').to_string(),
                    Some("strip_qmark") => value.trim_end_matches('?').to_string(),
                    Some(other) => {
                        return Err(TaskError::Invalid(format!(
                            "unknown slot modifier {other:?} in pattern {pattern:?}"
                        )))
                    }
                    None => value,
                };
                out.push_str(&value);
            }
            None => missing.push(field.to_string()),
        }
    }
    out.push_str(rest);
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(TaskError::MissingSlots { missing })
    }
}

/// Renders one instance under a template, one [`RenderedOption`] per option.
///
/// `fewshot_block` (exemplars plus trailing separator) is prepended to both
/// the conditional and the domain context, so k-shot PMI conditions its
/// denominator on the same exemplars.
///
/// Flipped instances render structurally: each option is promoted to a
/// context followed by the connective, and the demoted premise becomes the
/// shared hypothesis.
pub fn render(
    instance: &Instance,
    template: &Template,
    fewshot_block: Option<&str>,
) -> Result<Vec<RenderedOption>, TaskError> {
    let prefix = fewshot_block.unwrap_or("");
    if instance.flipped {
        return render_flipped(instance, template, prefix);
    }
    let conditional = format!("{prefix}{}", fill(&template.conditional_pattern, instance)?);
    let domain = format!("{prefix}{}", fill(&template.domain_premise, instance)?);
    Ok(instance
        .options
        .iter()
        .enumerate()
        .map(|(option_index, option)| RenderedOption {
            conditional_context: conditional.clone(),
            domain_context: domain.clone(),
            hypothesis: format!("{}{}", template.joiner, template.option_transform.apply(option)),
            option_index,
        })
        .collect())
}

fn render_flipped(
    instance: &Instance,
    template: &Template,
    prefix: &str,
) -> Result<Vec<RenderedOption>, TaskError> {
    let relation = instance
        .relation
        .ok_or_else(|| TaskError::NotFlippable("instance has no relation".into()))?;
    let premise = instance
        .premise_parts
        .get("premise")
        .ok_or_else(|| TaskError::NotFlippable("instance has no premise field".into()))?;
    let hypothesis = format!(
        "{}{}",
        template.joiner,
        template.option_transform.apply(premise)
    );
    let domain = format!("{prefix}{}", relation.word());
    Ok(instance
        .options
        .iter()
        .enumerate()
        .map(|(option_index, option)| RenderedOption {
            conditional_context: format!("{prefix}{option} {}", relation.word()),
            domain_context: domain.clone(),
            hypothesis: hypothesis.clone(),
            option_index,
        })
        .collect())
}

impl Template {
    pub fn from_file(path: &Path) -> Result<Self, TaskError> {
        let text = std::fs::read_to_string(path)?;
        let template: Template = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
            toml::from_str(&text).map_err(|e| TaskError::Invalid(format!("bad template TOML: {e}")))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| TaskError::Invalid(format!("bad template JSON: {e}")))?
        };
        Ok(template)
    }

    pub fn to_file(&self, path: &Path) -> Result<(), TaskError> {
        let text = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
            toml::to_string_pretty(self).map_err(|e| TaskError::Invalid(e.to_string()))?
        } else {
            serde_json::to_string_pretty(self).map_err(|e| TaskError::Invalid(e.to_string()))?
        };
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Looks up a bundled template by id.
    pub fn bundled(id: &str) -> Result<Template, TaskError> {
        bundled_templates()
            .into_iter()
            .find(|t| t.id == id)
            .ok_or_else(|| TaskError::UnknownTemplate {
                id: id.to_string(),
                available: bundled_template_ids(),
            })
    }

    /// Default template for a dataset id, when one is bundled.
    pub fn default_for_dataset(dataset_id: &str) -> Result<Template, TaskError> {
        bundled_templates()
            .into_iter()
            .find(|t| t.dataset_id == dataset_id && t.id == dataset_id)
            .ok_or_else(|| TaskError::UnknownTemplate {
                id: dataset_id.to_string(),
                available: bundled_template_ids(),
            })
    }
}

pub fn bundled_template_ids() -> Vec<String> {
    bundled_templates().into_iter().map(|t| t.id).collect()
}

fn t(
    id: &str,
    dataset_id: &str,
    conditional_pattern: &str,
    domain_premise: &str,
    lowercase_first: bool,
    closed_label_set: Option<&[&str]>,
) -> Template {
    Template {
        id: id.to_string(),
        version: 1,
        dataset_id: dataset_id.to_string(),
        conditional_pattern: conditional_pattern.to_string(),
        domain_premise: domain_premise.to_string(),
        option_transform: OptionTransform {
            lowercase_first,
            ensure_period: true,
        },
        closed_label_set: closed_label_set
            .map(|labels| labels.iter().map(|l| l.to_string()).collect()),
        joiner: default_joiner(),
    }
}

/// The registry of bundled templates: one per dataset split, the SST-2
/// prompt-sweep variants, and a generic QA fallback.
pub fn bundled_templates() -> Vec<Template> {
    vec![
        t(
            "copa",
            "copa",
            "{premise|strip_period} {relation}",
            "{relation}",
            true,
            None,
        ),
        t(
            "storycloze",
            "storycloze",
            "{story} The story continues:",
            "The story continues:",
            false,
            None,
        ),
        t("hellaswag", "hellaswag", "{context}", "", false, None),
        t(
            "race-m",
            "race-m",
            "{article} question: {question|strip_qmark}? answer:",
            "? answer:",
            false,
            None,
        ),
        t(
            "race-h",
            "race-h",
            "{article} question: {question|strip_qmark}? answer:",
            "? answer:",
            false,
            None,
        ),
        t(
            "arc-easy",
            "arc-easy",
            "{question} the answer is:",
            "the answer is:",
            true,
            None,
        ),
        t(
            "arc-challenge",
            "arc-challenge",
            "{question} the answer is:",
            "the answer is:",
            true,
            None,
        ),
        t(
            "obqa",
            "obqa",
            "{question} the answer is:",
            "the answer is:",
            true,
            None,
        ),
        t(
            "cqa",
            "cqa",
            "{question} the answer is:",
            "? the answer is:",
            true,
            None,
        ),
        t(
            "boolq",
            "boolq",
            "{passage} question: {question|strip_qmark}? answer:",
            "answer:",
            false,
            Some(&["Yes.", "No."]),
        ),
        t(
            "rte",
            "rte",
            "{premise} question: {hypothesis} true or false? answer:",
            "true or false? answer:",
            true,
            Some(&["true.", "false."]),
        ),
        t(
            "cb",
            "cb",
            "question: Given that {premise} Is {hypothesis} true, false, or neither? the answer is:",
            "the answer is:",
            true,
            Some(&["true.", "false.", "neither."]),
        ),
        t(
            "sst2",
            "sst2",
            "\"{quote}\" has a tone that is",
            "has a tone that is",
            true,
            Some(&["positive.", "negative."]),
        ),
        t(
            "sst5",
            "sst5",
            "\"{quote}\" has a tone that is",
            "has a tone that is",
            true,
            Some(&[
                "very negative.",
                "negative.",
                "neutral.",
                "positive.",
                "very positive.",
            ]),
        ),
        t(
            "agnews",
            "agnews",
            "title: {title} summary: {summary} topic:",
            "topic:",
            false,
            Some(&["World.", "Sports.", "Business.", "Technology."]),
        ),
        t(
            "trec",
            "trec",
            "{question} The answer to this question will be",
            "The answer to this question will be",
            true,
            Some(&[
                "a description.",
                "an entity.",
                "an abbreviation.",
                "a person.",
                "a location.",
                "a number.",
            ]),
        ),
        // SST-2 prompt-robustness variants; they share the domain premise and
        // label set so the unconditional baseline is identical across them.
        t(
            "sst2-v1",
            "sst2",
            "Quote: \"{quote}\" It has a tone that is",
            "has a tone that is",
            true,
            Some(&["positive.", "negative."]),
        ),
        t(
            "sst2-v2",
            "sst2",
            "Consider this movie review: \"{quote}\" Overall it has a tone that is",
            "has a tone that is",
            true,
            Some(&["positive.", "negative."]),
        ),
        t(
            "sst2-v3",
            "sst2",
            "\"{quote}\" In short, the quote has a tone that is",
            "has a tone that is",
            true,
            Some(&["positive.", "negative."]),
        ),
        t(
            "generic-qa",
            "generic",
            "{question} the answer is:",
            "the answer is:",
            true,
            None,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::instance::Relation;
    use std::collections::BTreeMap;

    fn copa_instance() -> Instance {
        Instance {
            instance_id: "copa-fig2".into(),
            premise_parts: BTreeMap::from([("premise".to_string(), "The bar closed".to_string())]),
            options: vec!["it was crowded.".into(), "it was 3 AM.".into()],
            gold: Some(1),
            relation: Some(Relation::Because),
            dataset_id: "copa".into(),
            split: "dev".into(),
            flipped: false,
        }
    }

    #[test]
    fn copa_cause_item_renders_like_the_worked_example() {
        let template = Template::bundled("copa").unwrap();
        let rendered = render(&copa_instance(), &template, None).unwrap();
        assert_eq!(rendered.len(), 2);
        assert_eq!(rendered[0].conditional_context, "The bar closed because");
        assert_eq!(rendered[0].domain_context, "because");
        assert_eq!(rendered[0].hypothesis, " it was crowded.");
        assert_eq!(rendered[1].hypothesis, " it was 3 AM.");
    }

    #[test]
    fn cqa_domain_context_includes_the_question_mark() {
        let template = Template::bundled("cqa").unwrap();
        let instance = Instance {
            instance_id: "cqa-1".into(),
            premise_parts: BTreeMap::from([(
                "question".to_string(),
                "Where can I stand on a river to see water falling without getting wet?"
                    .to_string(),
            )]),
            options: vec!["bridge".into(), "waterfall".into()],
            gold: Some(0),
            relation: None,
            dataset_id: "cqa".into(),
            split: "dev".into(),
            flipped: false,
        };
        let rendered = render(&instance, &template, None).unwrap();
        assert_eq!(rendered[0].domain_context, "? the answer is:");
        assert!(rendered[0]
            .conditional_context
            .ends_with("? the answer is:"));
        assert_eq!(rendered[0].hypothesis, " bridge.");
    }

    #[test]
    fn unfilled_slot_errors_list_missing_fields() {
        let template = Template::bundled("rte").unwrap();
        let mut instance = copa_instance();
        instance.premise_parts = BTreeMap::from([("premise".to_string(), "A.".to_string())]);
        let err = render(&instance, &template, None).unwrap_err();
        match err {
            TaskError::MissingSlots { missing } => assert_eq!(missing, vec!["hypothesis"]),
            other => panic!("expected missing slots, got {other}"),
        }
    }

    #[test]
    fn fewshot_block_prefixes_both_contexts() {
        let template = Template::bundled("copa").unwrap();
        let block = "The man broke his toe because he got a hole in his sock.\n\n";
        let rendered = render(&copa_instance(), &template, Some(block)).unwrap();
        assert_eq!(
            rendered[0].conditional_context,
            format!("{block}The bar closed because")
        );
        assert_eq!(rendered[0].domain_context, format!("{block}because"));
        // The hypothesis is untouched by the exemplars.
        assert_eq!(rendered[0].hypothesis, " it was crowded.");
    }

    #[test]
    fn every_bundled_domain_premise_is_a_suffix_of_its_conditional_context() {
        // Structural check over synthetic instances; the acceptance fixtures
        // re-check this over real rendered data.
        for template in bundled_templates() {
            let mut parts = BTreeMap::new();
            for field in [
                "premise",
                "story",
                "context",
                "article",
                "question",
                "passage",
                "hypothesis",
                "quote",
                "title",
                "summary",
            ] {
                parts.insert(field.to_string(), format!("Sample {field} text?"));
            }
            let instance = Instance {
                instance_id: "synthetic".into(),
                premise_parts: parts,
                options: vec!["alpha".into(), "beta".into()],
                gold: Some(0),
                relation: Some(Relation::Because),
                dataset_id: template.dataset_id.clone(),
                split: "dev".into(),
                flipped: false,
            };
            let rendered = render(&instance, &template, None).unwrap();
            assert!(
                rendered[0]
                    .conditional_context
                    .ends_with(&rendered[0].domain_context),
                "template {}: {:?} does not end with {:?}",
                template.id,
                rendered[0].conditional_context,
                rendered[0].domain_context
            );
        }
    }

    #[test]
    fn hypotheses_are_byte_identical_across_contexts() {
        let template = Template::bundled("copa").unwrap();
        let rendered = render(&copa_instance(), &template, None).unwrap();
        for option in &rendered {
            // Identity is structural: one hypothesis string serves both
            // scoring calls. Assert the invariant the scorer depends on.
            assert!(option.hypothesis.starts_with(' '));
            assert!(!option.hypothesis.is_empty());
        }
    }

    #[test]
    fn unknown_template_lists_available_ids() {
        let err = Template::bundled("nope").unwrap_err();
        match err {
            TaskError::UnknownTemplate { available, .. } => {
                assert!(available.contains(&"copa".to_string()));
                assert!(available.contains(&"generic-qa".to_string()));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn templates_round_trip_through_json_and_toml_files() {
        let dir = tempfile::tempdir().unwrap();
        let template = Template::bundled("sst2").unwrap();
        for name in ["t.json", "t.toml"] {
            let path = dir.path().join(name);
            template.to_file(&path).unwrap();
            let back = Template::from_file(&path).unwrap();
            assert_eq!(back, template);
        }
    }

    #[test]
    fn option_transform_rules() {
        let transform = OptionTransform {
            lowercase_first: true,
            ensure_period: true,
        };
        assert_eq!(transform.apply("He got a hole in his sock."), "he got a hole in his sock.");
        assert_eq!(transform.apply("Bridge"), "bridge.");
        assert_eq!(transform.apply("is it?"), "is it?");
    }
}
