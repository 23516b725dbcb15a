//! Best/worst spreads and winner tallies over a finished grid.
//!
//! Seeds are averaged first, so a "configuration" is one
//! (split, target, loss) triple within a (dataset, model) group. Ties are
//! broken in favour of the configuration that comes first in axis order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::GridResult;
use crate::error::{Error, Result};
use crate::eval::Metric;

/// Definition used for the `avg_improvement` column.
pub const IMPROVEMENT_DEFINITION: &str =
    "mean over H@10,N@10,H@20,N@20 of (max - min) / min across configurations of one (dataset, model); best/worst labels chosen by N@10";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigMean {
    pub label: String,
    /// Position of the configuration in axis order.
    pub order: usize,
    pub metrics: [f64; 4],
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestWorst {
    pub dataset: String,
    pub model: String,
    pub best: String,
    pub worst: String,
    pub best_n10: f64,
    pub worst_n10: f64,
    /// Per metric, `None` when the minimum is zero and the maximum is not.
    pub per_metric: [Option<f64>; 4],
    pub avg_improvement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub label: String,
    pub best: usize,
    pub second: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub best_worst: Vec<BestWorst>,
    pub tallies: Vec<Tally>,
}

/// Descending by value, then ascending axis order.
fn ranked(configs: &[ConfigMean], m: usize) -> Vec<&ConfigMean> {
    let mut v: Vec<&ConfigMean> = configs.iter().collect();
    v.sort_by(|a, b| b.metrics[m].total_cmp(&a.metrics[m]).then(a.order.cmp(&b.order)));
    v
}

fn relative_spread(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = values.fold(f64::INFINITY, f64::min);
    match (max == min, min > 0.0) {
        (true, _) => Some(0.0),
        (false, true) => Some((max - min) / min),
        (false, false) => None,
    }
}

/// Per (dataset, model): seed-averaged metrics per configuration, in axis
/// order. Only successful cells contribute.
pub fn group_means(result: &GridResult) -> BTreeMap<(usize, usize), (String, String, Vec<ConfigMean>)> {
    let mut groups: BTreeMap<(usize, usize), (String, String, BTreeMap<usize, ConfigMean>)> = BTreeMap::new();
    let seeds = result.config.axes.seeds.len();
    let models = &result.config.axes.models;
    for c in &result.cells {
        let Ok(ok) = &c.outcome else { continue };
        let cell = &c.cell;
        let model_pos = models.iter().position(|&m| m == cell.model).unwrap_or(0);
        // cell index without the dataset/model/seed coordinates
        let per_model = result.cells_per_model();
        let order = (cell.index % per_model) / seeds;
        let entry = groups.entry((cell.dataset, model_pos)).or_insert_with(|| {
            (result.config.datasets[cell.dataset].name.clone(), cell.model.to_string(), BTreeMap::new())
        });
        let cm = entry.2.entry(order).or_insert_with(|| ConfigMean {
            label: c.config_label(),
            order,
            metrics: [0.0; 4],
            seeds: 0,
        });
        for (i, m) in Metric::ALL.iter().enumerate() {
            cm.metrics[i] += ok.test.get(*m);
        }
        cm.seeds += 1;
    }
    groups
        .into_iter()
        .map(|(k, (d, m, configs))| {
            let configs = configs
                .into_values()
                .map(|mut c| {
                    for x in c.metrics.iter_mut() {
                        *x /= c.seeds as f64;
                    }
                    c
                })
                .collect();
            (k, (d, m, configs))
        })
        .collect()
}

pub fn summarize(result: &GridResult) -> Result<Summary> {
    let groups = group_means(result);
    if groups.is_empty() {
        return Err(Error::Empty("no successful cells to summarize"));
    }
    let n10 = Metric::ALL.iter().position(|&m| m == Metric::N10).unwrap();
    let mut best_worst = Vec::new();
    let mut tallies: BTreeMap<usize, Tally> = BTreeMap::new();
    for (dataset, model, configs) in groups.values() {
        let by_n10 = ranked(configs, n10);
        let best = by_n10[0];
        let lowest = by_n10.last().unwrap().metrics[n10];
        let worst = configs.iter().find(|c| c.metrics[n10].total_cmp(&lowest) == Ordering::Equal).unwrap();
        let per_metric: [Option<f64>; 4] =
            std::array::from_fn(|m| relative_spread(configs.iter().map(move |c| c.metrics[m])));
        let avg_improvement = per_metric.iter().copied().sum::<Option<f64>>().map(|s| s / 4.0);
        best_worst.push(BestWorst {
            dataset: dataset.clone(),
            model: model.clone(),
            best: best.label.clone(),
            worst: worst.label.clone(),
            best_n10: best.metrics[n10],
            worst_n10: worst.metrics[n10],
            per_metric,
            avg_improvement,
        });
        for c in configs {
            tallies.entry(c.order).or_insert_with(|| Tally { label: c.label.clone(), best: 0, second: 0 });
        }
        for m in 0..Metric::ALL.len() {
            let r = ranked(configs, m);
            tallies.get_mut(&r[0].order).unwrap().best += 1;
            if let Some(second) = r.get(1) {
                tallies.get_mut(&second.order).unwrap().second += 1;
            }
        }
    }
    Ok(Summary { best_worst, tallies: tallies.into_values().collect() })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |v| format!("{v:.6}"))
}

pub fn write_best_worst<W: Write>(mut w: W, s: &Summary) -> Result<()> {
    writeln!(w, "dataset,model,best_config,worst_config,best_N@10,worst_N@10,impr_H@10,impr_N@10,impr_H@20,impr_N@20,avg_improvement")?;
    for r in &s.best_worst {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6},{},{},{},{},{}",
            r.dataset,
            r.model,
            r.best,
            r.worst,
            r.best_n10,
            r.worst_n10,
            opt(r.per_metric[0]),
            opt(r.per_metric[1]),
            opt(r.per_metric[2]),
            opt(r.per_metric[3]),
            opt(r.avg_improvement)
        )?;
    }
    Ok(())
}

pub fn write_tallies<W: Write>(mut w: W, s: &Summary) -> Result<()> {
    writeln!(w, "config,best_count,second_count")?;
    for t in &s.tallies {
        writeln!(w, "{},{},{}", t.label, t.best, t.second)?;
    }
    Ok(())
}
