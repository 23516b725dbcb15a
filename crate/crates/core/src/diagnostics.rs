//! How a training set distributes its targets over the catalog.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::augment::TrainingSet;
use crate::corpus::ItemId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution {
    /// Indexed by item id; slot 0 (padding) is always zero.
    pub counts: Vec<u64>,
    pub total: u64,
    /// Items with a positive count, by count descending then id ascending.
    pub order: Vec<ItemId>,
}

impl TargetDistribution {
    pub fn probability(&self, item: ItemId) -> f64 {
        self.counts.get(item as usize).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetInputs {
    pub item: ItemId,
    pub examples: u64,
    pub distinct_inputs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputsPerTarget {
    /// One entry per item that occurs as a target, ascending by id.
    pub items: Vec<TargetInputs>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub coverage: f64,
    pub entropy_bits: f64,
    pub gini: f64,
}

/// `catalog_size` sets the length of `counts`; targets beyond it extend it.
pub fn target_distribution(ts: &TrainingSet, catalog_size: usize) -> Result<TargetDistribution> {
    if ts.examples.is_empty() {
        return Err(Error::Empty("training set has no examples"));
    }
    let max_target = ts.examples.iter().map(|e| e.target as usize).max().unwrap_or(0);
    let mut counts = vec![0u64; catalog_size.max(max_target) + 1];
    for e in &ts.examples {
        counts[e.target as usize] += 1;
    }
    let mut order: Vec<ItemId> = (1..counts.len()).filter(|&v| counts[v] > 0).map(|v| v as ItemId).collect();
    order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    Ok(TargetDistribution { counts, total: ts.examples.len() as u64, order })
}

/// Distinct inputs are compared by exact item-list equality.
pub fn inputs_per_target(ts: &TrainingSet) -> Result<InputsPerTarget> {
    if ts.examples.is_empty() {
        return Err(Error::Empty("training set has no examples"));
    }
    let mut map: HashMap<ItemId, (u64, HashSet<&[ItemId]>)> = HashMap::new();
    for e in &ts.examples {
        let entry = map.entry(e.target).or_default();
        entry.0 += 1;
        entry.1.insert(&e.input);
    }
    let mut items: Vec<TargetInputs> = map
        .into_iter()
        .map(|(item, (examples, inputs))| TargetInputs { item, examples, distinct_inputs: inputs.len() as u64 })
        .collect();
    items.sort_by_key(|t| t.item);
    Ok(InputsPerTarget { items })
}

/// Gini over values sorted ascending: `Σ (2i − n − 1) x_(i) / (n Σ x)`.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total == 0.0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let weighted: f64 = sorted.iter().enumerate().map(|(i, &x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x).sum();
    weighted / (n as f64 * total)
}

/// Coverage and Gini are taken over the full catalog `1..=catalog_size`,
/// zeros included.
pub fn distribution_stats(dist: &TargetDistribution, catalog_size: usize) -> DistributionStats {
    let probs: Vec<f64> = (1..=catalog_size).map(|v| dist.probability(v as ItemId)).collect();
    let covered = probs.iter().filter(|&&p| p > 0.0).count();
    let entropy_bits = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>();
    DistributionStats {
        coverage: if catalog_size == 0 { 0.0 } else { covered as f64 / catalog_size as f64 },
        entropy_bits,
        gini: gini(&probs),
    }
}

/// `rank,probability` rows for items with positive probability.
pub fn write_rank_csv<W: Write>(mut w: W, dist: &TargetDistribution) -> Result<()> {
    writeln!(w, "rank,probability")?;
    for (r, &item) in dist.order.iter().enumerate() {
        writeln!(w, "{},{}", r + 1, dist.probability(item))?;
    }
    Ok(())
}

pub fn write_inputs_csv<W: Write>(mut w: W, ipt: &InputsPerTarget) -> Result<()> {
    writeln!(w, "target_item,example_count,distinct_inputs")?;
    for t in &ipt.items {
        writeln!(w, "{},{},{}", t.item, t.examples, t.distinct_inputs)?;
    }
    Ok(())
}
