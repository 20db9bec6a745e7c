//! The cause/effect flip: options are promoted to contexts and the premise
//! is demoted to a single shared continuation, with the connective inverted
//! (because <-> so).
//!
//! Case normalization is mechanical: the promoted side gets its first
//! character capitalized, the demoted side gets it lower-cased, and one
//! trailing period is stripped from text moving into context position (the
//! hypothesis transform restores terminal punctuation at render time). No
//! proper-noun detection is attempted, so flip(flip(x)) reproduces the
//! original up to that normalization.

use super::instance::Instance;
use super::template::{capitalize_first, lower_first};
use super::TaskError;

fn strip_one_period(s: &str) -> &str {
    s.strip_suffix('.').unwrap_or(s)
}

/// Swaps premise and options of a COPA-structured instance. Flipping twice
/// restores the original orientation.
pub fn copa_flip(instance: &Instance) -> Result<Instance, TaskError> {
    let relation = instance
        .relation
        .ok_or_else(|| TaskError::NotFlippable("instance has no because/so relation".into()))?;
    let premise = instance
        .premise_parts
        .get("premise")
        .ok_or_else(|| TaskError::NotFlippable("instance has no \"premise\" field".into()))?;
    if instance.premise_parts.len() != 1 {
        return Err(TaskError::NotFlippable(format!(
            "expected exactly the COPA structure (one premise clause), found fields {:?}",
            instance.premise_parts.keys().collect::<Vec<_>>()
        )));
    }

    let now_flipped = !instance.flipped;
    // The premise swaps role with the options: toward continuation position
    // it is lower-cased, toward context position capitalized.
    let new_premise = if now_flipped {
        lower_first(strip_one_period(premise))
    } else {
        capitalize_first(strip_one_period(premise))
    };
    let new_options: Vec<String> = instance
        .options
        .iter()
        .map(|option| {
            if now_flipped {
                capitalize_first(strip_one_period(option))
            } else {
                lower_first(strip_one_period(option))
            }
        })
        .collect();

    let mut flipped = instance.clone();
    flipped
        .premise_parts
        .insert("premise".to_string(), new_premise);
    flipped.options = new_options;
    flipped.relation = Some(relation.inverse());
    flipped.flipped = now_flipped;
    Ok(flipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::instance::Relation;
    use crate::task::template::{render, Template};
    use std::collections::BTreeMap;

    fn bar_instance() -> Instance {
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
    fn because_item_flips_to_so_contexts_with_shared_continuation() {
        let flipped = copa_flip(&bar_instance()).unwrap();
        assert!(flipped.flipped);
        assert_eq!(flipped.relation, Some(Relation::So));
        assert_eq!(flipped.gold, Some(1), "gold index is preserved");

        let template = Template::bundled("copa").unwrap();
        let rendered = render(&flipped, &template, None).unwrap();
        assert_eq!(rendered[0].conditional_context, "It was crowded so");
        assert_eq!(rendered[1].conditional_context, "It was 3 AM so");
        assert_eq!(rendered[0].domain_context, "so");
        for option in &rendered {
            assert_eq!(option.hypothesis, " the bar closed.");
        }
    }

    #[test]
    fn double_flip_reproduces_the_original_rendering() {
        let template = Template::bundled("copa").unwrap();
        let original = bar_instance();
        let twice = copa_flip(&copa_flip(&original).unwrap()).unwrap();
        assert!(!twice.flipped);
        assert_eq!(twice.relation, original.relation);
        let a = render(&original, &template, None).unwrap();
        let b = render(&twice, &template, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paraphrase_distractor_flips_identically() {
        let mut instance = bar_instance();
        instance.options[1] = "it was 3:30AM".into();
        let flipped = copa_flip(&instance).unwrap();
        let template = Template::bundled("copa").unwrap();
        let rendered = render(&flipped, &template, None).unwrap();
        assert_eq!(rendered[1].conditional_context, "It was 3:30AM so");
    }

    #[test]
    fn so_item_flips_to_because() {
        let instance = Instance {
            instance_id: "copa-so".into(),
            premise_parts: BTreeMap::from([(
                "premise".to_string(),
                "I tipped the bottle".to_string(),
            )]),
            options: vec!["the liquid spilled.".into(), "the liquid froze.".into()],
            gold: Some(0),
            relation: Some(Relation::So),
            dataset_id: "copa".into(),
            split: "dev".into(),
            flipped: false,
        };
        let flipped = copa_flip(&instance).unwrap();
        assert_eq!(flipped.relation, Some(Relation::Because));
        let template = Template::bundled("copa").unwrap();
        let rendered = render(&flipped, &template, None).unwrap();
        assert_eq!(rendered[0].conditional_context, "The liquid spilled because");
        assert_eq!(rendered[0].hypothesis, " i tipped the bottle.");
    }

    #[test]
    fn missing_relation_is_not_flippable() {
        let mut instance = bar_instance();
        instance.relation = None;
        assert!(matches!(
            copa_flip(&instance),
            Err(TaskError::NotFlippable(_))
        ));
    }

    #[test]
    fn flipped_options_share_one_byte_identical_continuation() {
        let flipped = copa_flip(&bar_instance()).unwrap();
        let template = Template::bundled("copa").unwrap();
        let rendered = render(&flipped, &template, None).unwrap();
        let first = &rendered[0].hypothesis;
        assert!(rendered.iter().all(|r| &r.hypothesis == first));
        let contexts: std::collections::BTreeSet<&String> = rendered
            .iter()
            .map(|r| &r.conditional_context)
            .collect();
        assert_eq!(contexts.len(), rendered.len(), "contexts differ per option");
    }
}
