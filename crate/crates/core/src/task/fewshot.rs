//! Seeded sampling of few-shot exemplars and assembly of the exemplar block.

use rand::rngs::StdRng;
use rand::SeedableRng;

use serde::{Deserialize, Serialize};

use super::instance::Instance;
use super::template::{render, Template};
use super::TaskError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub k: usize,
    pub seed: u64,
    /// When non-empty, exemplars are drawn only from instances of this split.
    #[serde(default)]
    pub source_split: String,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    "\n\n".to_string()
}

impl FewShotConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            source_split: String::new(),
            separator: default_separator(),
        }
    }
}

/// Draws `cfg.k` exemplars from the pool without replacement,
/// deterministically in the seed.
pub fn sample_fewshot(pool: &[Instance], cfg: &FewShotConfig) -> Result<Vec<Instance>, TaskError> {
    if cfg.k == 0 {
        return Ok(Vec::new());
    }
    let eligible: Vec<&Instance> = pool
        .iter()
        .filter(|i| cfg.source_split.is_empty() || i.split == cfg.source_split)
        .collect();
    if eligible.len() < cfg.k {
        return Err(TaskError::PoolTooSmall {
            pool: eligible.len(),
            need: cfg.k,
        });
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let indices = rand::seq::index::sample(&mut rng, eligible.len(), cfg.k);
    Ok(indices.iter().map(|i| eligible[i].clone()).collect())
}

/// Renders exemplars into the prefix block prepended to both scoring
/// contexts: each exemplar is its conditional context followed by its gold
/// hypothesis, joined and terminated by the separator. Empty for k = 0.
///
/// `exclude_id` keeps an evaluation instance out of its own exemplars; pass
/// one spare exemplar so the block still reaches length k after exclusion.
pub fn build_fewshot_block(
    exemplars: &[Instance],
    template: &Template,
    separator: &str,
    k: usize,
    exclude_id: &str,
) -> Result<Option<String>, TaskError> {
    if k == 0 {
        return Ok(None);
    }
    let chosen: Vec<&Instance> = exemplars
        .iter()
        .filter(|e| e.instance_id != exclude_id)
        .take(k)
        .collect();
    if chosen.len() < k {
        return Err(TaskError::PoolTooSmall {
            pool: chosen.len(),
            need: k,
        });
    }
    let mut parts = Vec::with_capacity(k);
    for exemplar in chosen {
        let gold = exemplar
            .gold
            .ok_or_else(|| TaskError::ExemplarWithoutGold {
                id: exemplar.instance_id.clone(),
            })?;
        let rendered = render(exemplar, template, None)?;
        let gold_option = &rendered[gold];
        parts.push(format!(
            "{}{}",
            gold_option.conditional_context, gold_option.hypothesis
        ));
    }
    let mut block = parts.join(separator);
    block.push_str(separator);
    Ok(Some(block))
}
