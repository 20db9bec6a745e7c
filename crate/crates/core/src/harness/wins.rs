//! Wins/ties aggregation: for each strategy, the percentage of datasets on
//! which its accuracy equals the maximum across strategies. Ties credit every
//! tied strategy, so rows may sum to more than 100.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scoring::Strategy;

use super::{EvalReport, HarnessError};

/// Tolerance for counting two accuracies as tied.
const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetAccuracies {
    pub dataset_id: String,
    /// May omit strategies not measured on this dataset (they are excluded
    /// from this dataset's winner pool but still divide by the full dataset
    /// count in the output row).
    pub accuracy: BTreeMap<Strategy, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WinsTable {
    pub n_datasets: usize,
    /// Percent of datasets won or tied, per strategy, in [0, 100].
    pub percent: BTreeMap<Strategy, f64>,
    /// Winner set per dataset, for audits of individual credits.
    pub winners: BTreeMap<String, Vec<Strategy>>,
}

/// Strict-maximum-with-ties crediting over one model's datasets.
///
/// Every dataset must share a common core strategy set (the intersection
/// must be non-empty); strategies measured on only some datasets (e.g. CC)
/// join the winner pool where present.
pub fn aggregate_wins(datasets: &[DatasetAccuracies]) -> Result<WinsTable, HarnessError> {
    if datasets.is_empty() {
        return Err(HarnessError::Config("no datasets to aggregate".into()));
    }
    let mut core: Option<Vec<Strategy>> = None;
    let mut union: BTreeMap<Strategy, usize> = BTreeMap::new();
    for dataset in datasets {
        if dataset.accuracy.is_empty() {
            return Err(HarnessError::InconsistentStrategies(format!(
                "dataset {} has no accuracies",
                dataset.dataset_id
            )));
        }
        let strategies: Vec<Strategy> = dataset.accuracy.keys().copied().collect();
        core = Some(match core {
            None => strategies.clone(),
            Some(prev) => prev
                .into_iter()
                .filter(|s| strategies.contains(s))
                .collect(),
        });
        for strategy in strategies {
            *union.entry(strategy).or_insert(0) += 1;
        }
    }
    let core = core.unwrap_or_default();
    if core.is_empty() {
        return Err(HarnessError::InconsistentStrategies(
            "datasets share no common strategy".into(),
        ));
    }

    let mut wins: BTreeMap<Strategy, usize> = union.keys().map(|s| (*s, 0)).collect();
    let mut winners = BTreeMap::new();
    for dataset in datasets {
        let best = dataset
            .accuracy
            .values()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut dataset_winners = Vec::new();
        for (strategy, &accuracy) in &dataset.accuracy {
            if (accuracy - best).abs() <= TIE_EPSILON {
                *wins.get_mut(strategy).unwrap() += 1;
                dataset_winners.push(*strategy);
            }
        }
        winners.insert(dataset.dataset_id.clone(), dataset_winners);
    }
    let n = datasets.len();
    Ok(WinsTable {
        n_datasets: n,
        percent: wins
            .into_iter()
            .map(|(s, w)| (s, 100.0 * w as f64 / n as f64))
            .collect(),
        winners,
    })
}

/// Adapts evaluation reports (grouped by model, one per dataset) into wins
/// input rows.
pub fn wins_input_from_reports(reports: &[EvalReport]) -> Vec<DatasetAccuracies> {
    reports
        .iter()
        .map(|report| DatasetAccuracies {
            dataset_id: report.dataset_id.clone(),
            accuracy: report.accuracy.clone(),
        })
        .collect()
}

pub fn wins_table_markdown(rows: &[(String, WinsTable)], strategies: &[Strategy]) -> String {
    let mut out = String::from("| Model |");
    for strategy in strategies {
        out.push_str(&format!(" {} |", strategy.label()));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(strategies.len()));
    out.push('\n');
    for (model, table) in rows {
        out.push_str(&format!("| {model} |"));
        for strategy in strategies {
            match table.percent.get(strategy) {
                Some(percent) => out.push_str(&format!(" {percent:.2} |")),
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(name: &str, pairs: &[(Strategy, f64)]) -> DatasetAccuracies {
        DatasetAccuracies {
            dataset_id: name.into(),
            accuracy: pairs.iter().copied().collect(),
        }
    }

    #[test]
    fn strict_winner_on_every_dataset_scores_100() {
        let table = aggregate_wins(&[
            dataset("d1", &[(Strategy::Lm, 0.7), (Strategy::Avg, 0.6)]),
            dataset("d2", &[(Strategy::Lm, 0.9), (Strategy::Avg, 0.1)]),
        ])
        .unwrap();
        assert_eq!(table.percent[&Strategy::Lm], 100.0);
        assert_eq!(table.percent[&Strategy::Avg], 0.0);
    }

    #[test]
    fn ties_credit_every_tied_strategy() {
        let table = aggregate_wins(&[
            dataset("d1", &[(Strategy::Lm, 0.5), (Strategy::Avg, 0.5)]),
            dataset("d2", &[(Strategy::Lm, 0.9), (Strategy::Avg, 0.2)]),
        ])
        .unwrap();
        assert_eq!(table.percent[&Strategy::Lm], 100.0);
        assert_eq!(table.percent[&Strategy::Avg], 50.0);
        // Rows may exceed 100 in total.
        let sum: f64 = table.percent.values().sum();
        assert!(sum > 100.0);
    }

    #[test]
    fn partially_measured_strategy_joins_where_present() {
        let table = aggregate_wins(&[
            dataset(
                "with-cc",
                &[(Strategy::Lm, 0.5), (Strategy::Cc, 0.8)],
            ),
            dataset("without-cc", &[(Strategy::Lm, 0.6)]),
        ])
        .unwrap();
        assert_eq!(table.percent[&Strategy::Cc], 50.0);
        assert_eq!(table.percent[&Strategy::Lm], 50.0);
    }

    #[test]
    fn disjoint_strategy_sets_are_inconsistent() {
        let err = aggregate_wins(&[
            dataset("d1", &[(Strategy::Lm, 0.5)]),
            dataset("d2", &[(Strategy::Avg, 0.5)]),
        ])
        .unwrap_err();
        assert!(matches!(err, HarnessError::InconsistentStrategies(_)));
    }

    #[test]
    fn percentages_stay_in_range_and_max_is_bounded_below() {
        let table = aggregate_wins(&[
            dataset("d1", &[(Strategy::Lm, 0.3), (Strategy::Avg, 0.4), (Strategy::Unc, 0.2)]),
            dataset("d2", &[(Strategy::Lm, 0.5), (Strategy::Avg, 0.4), (Strategy::Unc, 0.6)]),
            dataset("d3", &[(Strategy::Lm, 0.5), (Strategy::Avg, 0.5), (Strategy::Unc, 0.1)]),
        ])
        .unwrap();
        for &percent in table.percent.values() {
            assert!((0.0..=100.0).contains(&percent));
        }
        // Someone wins every dataset, so the best row is at least 100/|S|.
        let max = table.percent.values().cloned().fold(0.0f64, f64::max);
        assert!(max >= 100.0 / table.percent.len() as f64);
    }
}
