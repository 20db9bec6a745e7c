//! Prompt-robustness sweeps: the same dataset evaluated under each template,
//! reported as per-strategy accuracy lists with mean and sample standard
//! deviation (n-1 denominator).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::scoring::Strategy;
use crate::task::{Instance, Template};

use super::{evaluate, EvalReport, HarnessError, RunSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub mean: f64,
    pub sample_std: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub template_ids: Vec<String>,
    /// Accuracy per strategy, aligned with `template_ids`.
    pub accuracies: BTreeMap<Strategy, Vec<f64>>,
    pub stats: BTreeMap<Strategy, SweepStats>,
    pub per_template: Vec<EvalReport>,
}

/// Mean and sample standard deviation (n-1); std is 0 for n < 2.
pub fn mean_and_sample_std(values: &[f64]) -> SweepStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let sample_std = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    };
    SweepStats { mean, sample_std }
}

pub fn sweep(
    instances: &[Instance],
    templates: &[Template],
    backend: &(dyn Backend + Sync),
    settings: &RunSettings,
) -> Result<SweepReport, HarnessError> {
    if templates.len() < 2 {
        return Err(HarnessError::Config(format!(
            "a sweep needs at least 2 templates, got {}",
            templates.len()
        )));
    }
    let mut per_template = Vec::with_capacity(templates.len());
    let mut accuracies: BTreeMap<Strategy, Vec<f64>> = BTreeMap::new();
    for template in templates {
        let report = evaluate(instances, template, backend, settings)?;
        for strategy in &settings.strategies {
            accuracies
                .entry(*strategy)
                .or_default()
                .push(report.accuracy[strategy]);
        }
        per_template.push(report);
    }
    let stats = accuracies
        .iter()
        .map(|(strategy, values)| (*strategy, mean_and_sample_std(values)))
        .collect();
    Ok(SweepReport {
        template_ids: templates.iter().map(|t| t.id.clone()).collect(),
        accuracies,
        stats,
        per_template,
    })
}

/// Table-3 style emitter: `mean ±std` percentages per strategy.
pub fn sweep_table_markdown(report: &SweepReport, strategies: &[Strategy]) -> String {
    let mut out = String::from("| |");
    for strategy in strategies {
        out.push_str(&format!(" {} |", strategy.label()));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(strategies.len()));
    out.push('\n');
    out.push_str("| mean ±std |");
    for strategy in strategies {
        match report.stats.get(strategy) {
            Some(stats) => out.push_str(&format!(
                " {:.1} ±{:.1} |",
                stats.mean * 100.0,
                stats.sample_std * 100.0
            )),
            None => out.push_str(" - |"),
        }
    }
    out.push('\n');
    out
}

pub fn sweep_table_tsv(report: &SweepReport, strategies: &[Strategy]) -> String {
    let mut out = String::from("strategy\tmean\tsample_std\n");
    for strategy in strategies {
        if let Some(stats) = report.stats.get(strategy) {
            out.push_str(&format!(
                "{}\t{:.4}\t{:.4}\n",
                strategy.label(),
                stats.mean * 100.0,
                stats.sample_std * 100.0
            ));
        }
    }
    out
}
