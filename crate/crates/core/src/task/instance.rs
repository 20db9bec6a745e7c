//! Multiple-choice instances and their JSONL wire format.
//!
//! One object per line:
//! `{"id": ..., "premise": {field: text, ...}, "options": [...], "label": 0,
//!   "relation": "because"|"so"|null, "dataset": ..., "split": ...}`
//! (`schemas/instance.schema.json` in the repository documents the schema.)

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TaskError;

/// Discourse relation of a cause/effect item; decides the connective word
/// and how the instance flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Because,
    So,
}

impl Relation {
    pub fn word(&self) -> &'static str {
        match self {
            Relation::Because => "because",
            Relation::So => "so",
        }
    }

    pub fn inverse(&self) -> Relation {
        match self {
            Relation::Because => Relation::So,
            Relation::So => Relation::Because,
        }
    }
}

/// One multiple-choice question: named premise fields, options, gold index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(rename = "id")]
    pub instance_id: String,
    #[serde(rename = "premise")]
    pub premise_parts: BTreeMap<String, String>,
    pub options: Vec<String>,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    #[serde(rename = "dataset", default, skip_serializing_if = "String::is_empty")]
    pub dataset_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub split: String,
    /// Set by the flip transformation; never expected in source datasets.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flipped: bool,
}

impl Instance {
    fn check(&self, line: usize, require_label: bool) -> Result<(), TaskError> {
        if self.instance_id.is_empty() {
            return Err(TaskError::InvalidInstance {
                line,
                message: "empty instance id".into(),
            });
        }
        if self.options.len() < 2 {
            return Err(TaskError::InvalidInstance {
                line,
                message: format!("need at least 2 options, got {}", self.options.len()),
            });
        }
        if self.options.iter().any(String::is_empty) {
            return Err(TaskError::InvalidInstance {
                line,
                message: "empty option string".into(),
            });
        }
        match self.gold {
            Some(gold) if gold >= self.options.len() => {
                return Err(TaskError::LabelOutOfRange {
                    line,
                    label: gold as i64,
                    options: self.options.len(),
                })
            }
            None if require_label => return Err(TaskError::MissingLabel { line }),
            _ => {}
        }
        Ok(())
    }
}

/// Loads and validates a JSONL dataset, reporting malformed lines by number.
/// `require_labels` distinguishes eval mode (gold mandatory) from
/// predict-only mode.
pub fn load_dataset(path: &Path, require_labels: bool) -> Result<Vec<Instance>, TaskError> {
    let file = std::fs::File::open(path)?;
    load_dataset_reader(BufReader::new(file), require_labels)
}

pub fn load_dataset_reader(
    reader: impl BufRead,
    require_labels: bool,
) -> Result<Vec<Instance>, TaskError> {
    let mut instances = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // Surface label range errors with their own diagnostic rather than a
        // generic integer-parse failure.
        let raw: serde_json::Value = serde_json::from_str(&line).map_err(|e| TaskError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let (Some(label), Some(options)) = (
            raw.get("label").and_then(|v| v.as_i64()),
            raw.get("options").and_then(|v| v.as_array()),
        ) {
            if label < 0 || label as usize >= options.len() {
                return Err(TaskError::LabelOutOfRange {
                    line: line_no,
                    label,
                    options: options.len(),
                });
            }
        }
        let instance: Instance = serde_json::from_value(raw).map_err(|e| TaskError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        instance.check(line_no, require_labels)?;
        if !seen_ids.insert(instance.instance_id.clone()) {
            return Err(TaskError::DuplicateId {
                line: line_no,
                id: instance.instance_id,
            });
        }
        instances.push(instance);
    }
    Ok(instances)
}

/// Writes instances back to JSONL; `load -> save -> load` is a fixed point.
pub fn save_dataset(path: &Path, instances: &[Instance]) -> Result<(), TaskError> {
    let mut file = std::fs::File::create(path)?;
    for instance in instances {
        let line = serde_json::to_string(instance)
            .map_err(|e| TaskError::Invalid(format!("serialize {}: {e}", instance.instance_id)))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn copa_line(id: &str, label: usize) -> String {
        format!(
            r#"{{"id":"{id}","premise":{{"premise":"The bar closed"}},"options":["it was crowded.","it was 3 AM."],"label":{label},"relation":"because","dataset":"copa"}}"#
        )
    }

    #[test]
    fn well_formed_lines_load() {
        let data = format!("{}\n{}\n", copa_line("c1", 0), copa_line("c2", 1));
        let instances = load_dataset_reader(Cursor::new(data), true).unwrap();
        assert_eq!(instances.len(), 2);
        assert_eq!(instances[0].relation, Some(Relation::Because));
        assert_eq!(instances[1].gold, Some(1));
    }

    #[test]
    fn label_equal_to_option_count_is_rejected_with_line_number() {
        let data = format!("{}\n{}\n", copa_line("c1", 0), copa_line("c2", 2));
        let err = load_dataset_reader(Cursor::new(data), true).unwrap_err();
        match err {
            TaskError::LabelOutOfRange {
                line,
                label,
                options,
            } => {
                assert_eq!((line, label, options), (2, 2, 2));
            }
            other => panic!("expected label range error, got {other}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let data = format!("{}\n{}\n", copa_line("c1", 0), copa_line("c1", 1));
        assert!(matches!(
            load_dataset_reader(Cursor::new(data), true),
            Err(TaskError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn missing_label_errors_in_eval_mode_only() {
        let line = r#"{"id":"q1","premise":{"question":"Where?"},"options":["a.","b."]}"#;
        assert!(matches!(
            load_dataset_reader(Cursor::new(line), true),
            Err(TaskError::MissingLabel { line: 1 })
        ));
        let instances = load_dataset_reader(Cursor::new(line), false).unwrap();
        assert_eq!(instances[0].gold, None);
    }

    #[test]
    fn five_option_record_round_trips_losslessly() {
        let line = r#"{"id":"cqa1","premise":{"question":"Where can I stand on a river to see water falling without getting wet?"},"options":["waterfall","bridge","valley","stream","bottom"],"label":1,"dataset":"cqa","split":"dev"}"#;
        let loaded = load_dataset_reader(Cursor::new(line), true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.jsonl");
        save_dataset(&path, &loaded).unwrap();
        let reloaded = load_dataset(&path, true).unwrap();
        assert_eq!(loaded, reloaded);
        // And a second cycle is a fixed point of the serialized bytes.
        let first = std::fs::read_to_string(&path).unwrap();
        save_dataset(&path, &reloaded).unwrap();
        let second = std::fs::read_to_string(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn malformed_json_reports_line_number() {
        let data = format!("{}\nnot json\n", copa_line("c1", 0));
        assert!(matches!(
            load_dataset_reader(Cursor::new(data), true),
            Err(TaskError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn fewer_than_two_options_is_invalid() {
        let line = r#"{"id":"x","premise":{"p":"t"},"options":["only"],"label":0}"#;
        assert!(matches!(
            load_dataset_reader(Cursor::new(line), true),
            Err(TaskError::InvalidInstance { line: 1, .. })
        ));
    }
}
