//! Machine-readable evaluation reports and the human table emitters.
//!
//! The JSON report is the stable machine interface (versioned schema, raw
//! fractions, records sorted by instance id). Human tables render accuracies
//! as percentages to one decimal, with the per-row maximum bolded in
//! Markdown.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scoring::Strategy;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    /// Per-option strategy scores, in option order.
    pub scores: Vec<f64>,
    pub selected: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub gold: usize,
    pub per_strategy: BTreeMap<Strategy, StrategyOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceError {
    pub instance_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model_id: String,
    pub dataset_id: String,
    pub split: String,
    pub template_id: String,
    pub template_version: u32,
    pub seed: u64,
    pub strategies: Vec<Strategy>,
    pub n_instances: usize,
    pub n_scored: usize,
    pub n_errored: usize,
    /// Raw fractions in [0, 1]; tables render percentages.
    pub accuracy: BTreeMap<Strategy, f64>,
    pub records: Vec<InstanceRecord>,
    pub errors: Vec<InstanceError>,
    pub started_at_unix_ms: u64,
    pub finished_at_unix_ms: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// The report with timestamps zeroed, for byte-identity comparisons.
    pub fn normalized(&self) -> EvalReport {
        let mut report = self.clone();
        report.started_at_unix_ms = 0;
        report.finished_at_unix_ms = 0;
        report
    }

    /// Prediction dump: one JSONL line per (instance, strategy).
    pub fn predictions_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            for (strategy, outcome) in &record.per_strategy {
                let line = serde_json::json!({
                    "instance_id": record.instance_id,
                    "strategy": strategy,
                    "scores": outcome.scores,
                    "selected": outcome.selected,
                    "gold": record.gold,
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
        out
    }
}

pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

/// One row per dataset, one column per strategy (accuracy-table layout).
/// Rows may omit strategies that were not measured; those cells render "-".
pub fn accuracy_table_markdown(
    rows: &[(String, BTreeMap<Strategy, f64>)],
    strategies: &[Strategy],
) -> String {
    let mut out = String::from("| Dataset |");
    for strategy in strategies {
        out.push_str(&format!(" {} |", strategy.label()));
    }
    out.push('\n');
    out.push_str("|---|");
    out.push_str(&"---|".repeat(strategies.len()));
    out.push('\n');
    for (dataset, accuracies) in rows {
        let best = strategies
            .iter()
            .filter_map(|s| accuracies.get(s))
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        out.push_str(&format!("| {dataset} |"));
        for strategy in strategies {
            match accuracies.get(strategy) {
                Some(&value) => {
                    let cell = format_percent(value);
                    if (value - best).abs() <= 1e-12 {
                        out.push_str(&format!(" **{cell}** |"));
                    } else {
                        out.push_str(&format!(" {cell} |"));
                    }
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn accuracy_table_tsv(
    rows: &[(String, BTreeMap<Strategy, f64>)],
    strategies: &[Strategy],
) -> String {
    let mut out = String::from("dataset");
    for strategy in strategies {
        out.push('\t');
        out.push_str(strategy.label());
    }
    out.push('\n');
    for (dataset, accuracies) in rows {
        out.push_str(dataset);
        for strategy in strategies {
            out.push('\t');
            match accuracies.get(strategy) {
                Some(&value) => out.push_str(&format_percent(value)),
                None => out.push('-'),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        let outcome = |selected: usize, correct: bool| StrategyOutcome {
            scores: vec![-1.0, -2.0],
            selected,
            correct,
        };
        EvalReport {
            schema_version: SCHEMA_VERSION,
            model_id: "toy:test".into(),
            dataset_id: "copa".into(),
            split: "dev".into(),
            template_id: "copa".into(),
            template_version: 1,
            seed: 0,
            strategies: vec![Strategy::Lm, Strategy::PmiDc],
            n_instances: 2,
            n_scored: 2,
            n_errored: 0,
            accuracy: BTreeMap::from([(Strategy::Lm, 0.5), (Strategy::PmiDc, 1.0)]),
            records: vec![
                InstanceRecord {
                    instance_id: "a".into(),
                    gold: 0,
                    per_strategy: BTreeMap::from([
                        (Strategy::Lm, outcome(0, true)),
                        (Strategy::PmiDc, outcome(0, true)),
                    ]),
                },
                InstanceRecord {
                    instance_id: "b".into(),
                    gold: 1,
                    per_strategy: BTreeMap::from([
                        (Strategy::Lm, outcome(0, false)),
                        (Strategy::PmiDc, outcome(1, true)),
                    ]),
                },
            ],
            errors: vec![],
            started_at_unix_ms: 123,
            finished_at_unix_ms: 456,
        }
    }

    #[test]
    fn accuracy_reconciles_with_record_flags() {
        let report = report();
        for (strategy, &accuracy) in &report.accuracy {
            let correct = report
                .records
                .iter()
                .filter(|r| r.per_strategy[strategy].correct)
                .count();
            let product = accuracy * report.n_scored as f64;
            assert!((product - correct as f64).abs() < 1e-9);
            assert_eq!(product.round() as usize, correct);
        }
    }

    #[test]
    fn json_round_trips() {
        let report = report();
        let json = report.to_json().unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn normalization_zeroes_only_timestamps() {
        let report = report();
        let normalized = report.normalized();
        assert_eq!(normalized.started_at_unix_ms, 0);
        assert_eq!(normalized.finished_at_unix_ms, 0);
        assert_eq!(normalized.records, report.records);
    }

    #[test]
    fn markdown_table_bolds_the_row_maximum() {
        let rows = vec![(
            "copa".to_string(),
            BTreeMap::from([(Strategy::Lm, 0.852), (Strategy::PmiDc, 0.892)]),
        )];
        let table = accuracy_table_markdown(&rows, &[Strategy::Lm, Strategy::PmiDc]);
        assert!(table.contains("| 85.2 |"));
        assert!(table.contains("**89.2**"));
    }

    #[test]
    fn tsv_table_emits_missing_cells_as_dash() {
        let rows = vec![(
            "rte".to_string(),
            BTreeMap::from([(Strategy::Lm, 0.56)]),
        )];
        let table = accuracy_table_tsv(&rows, &[Strategy::Lm, Strategy::Cc]);
        assert_eq!(table, "dataset\tLM\tCC\nrte\t56.0\t-\n");
    }

    #[test]
    fn predictions_jsonl_has_one_line_per_instance_strategy() {
        let report = report();
        let dump = report.predictions_jsonl();
        assert_eq!(dump.lines().count(), 4);
        let first: serde_json::Value = serde_json::from_str(dump.lines().next().unwrap()).unwrap();
        assert_eq!(first["instance_id"], "a");
        assert_eq!(first["gold"], 0);
    }
}
