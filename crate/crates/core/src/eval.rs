//! Leave-one-out, full-catalog ranking metrics.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, ItemId, PADDING};
use crate::error::{Error, Result};
use crate::models::Scorer;
use crate::scalar::Real;

pub const CUTOFFS: [usize; 2] = [10, 20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Valid,
    Test,
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "valid" | "validation" => Ok(Phase::Valid),
            "test" => Ok(Phase::Test),
            other => Err(Error::Config(format!("unknown phase `{other}`"))),
        }
    }
}

/// One of the four reported numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "H@10")]
    H10,
    #[serde(rename = "N@10")]
    N10,
    #[serde(rename = "H@20")]
    H20,
    #[serde(rename = "N@20")]
    N20,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::H10, Metric::N10, Metric::H20, Metric::N20];

    pub fn label(&self) -> &'static str {
        match self {
            Metric::H10 => "H@10",
            Metric::N10 => "N@10",
            Metric::H20 => "H@20",
            Metric::N20 => "N@20",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hr10: f64,
    pub ndcg10: f64,
    pub hr20: f64,
    pub ndcg20: f64,
    pub users: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ranks: Option<Vec<usize>>,
}

impl MetricReport {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::H10 => self.hr10,
            Metric::N10 => self.ndcg10,
            Metric::H20 => self.hr20,
            Metric::N20 => self.ndcg20,
        }
    }

    /// Averages per-user metrics in the given order.
    pub fn from_ranks(ranks: Vec<usize>, keep_ranks: bool) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Empty("no users to evaluate"));
        }
        let mut sums = [0.0f64; 4];
        for &r in &ranks {
            let (h10, n10) = metrics_from_rank(r, 10);
            let (h20, n20) = metrics_from_rank(r, 20);
            sums[0] += h10;
            sums[1] += n10;
            sums[2] += h20;
            sums[3] += n20;
        }
        let n = ranks.len() as f64;
        Ok(MetricReport {
            hr10: sums[0] / n,
            ndcg10: sums[1] / n,
            hr20: sums[2] / n,
            ndcg20: sums[3] / n,
            users: ranks.len(),
            ranks: keep_ranks.then_some(ranks),
        })
    }

    /// `H@10 ≤ H@20`, `N@10 ≤ N@20`, `N@K ≤ H@K`, all within `[0, 1]`.
    pub fn check_invariants(&self) -> bool {
        let in_unit = [self.hr10, self.ndcg10, self.hr20, self.ndcg20].iter().all(|x| (0.0..=1.0).contains(x));
        in_unit && self.hr10 <= self.hr20 && self.ndcg10 <= self.ndcg20 && self.ndcg10 <= self.hr10 && self.ndcg20 <= self.hr20
    }
}

/// 1-based rank of `target` among slots `1..`, ties broken by ascending
/// item index. A non-finite target score ranks last.
pub fn rank_of_target<T: Real>(scores: &[T], target: ItemId) -> usize {
    let t = target as usize;
    debug_assert!(target != PADDING && t < scores.len());
    let st = scores[t];
    let n = scores.len() - 1;
    if !st.is_finite() {
        return n;
    }
    let mut rank = 1;
    for (v, &s) in scores.iter().enumerate().skip(1) {
        if s > st || (s == st && v < t) {
            rank += 1;
        }
    }
    rank
}

/// `(hit, ndcg)` for a single relevant item.
pub fn metrics_from_rank(rank: usize, k: usize) -> (f64, f64) {
    if rank <= k {
        (1.0, 1.0 / ((rank + 1) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub max_len: usize,
    /// Mask items already in the context (the target itself is never masked).
    pub filter_seen: bool,
    pub keep_ranks: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { max_len: 50, filter_seen: false, keep_ranks: false }
    }
}

/// Ranks every user's held-out item. The context is the training sequence
/// (valid) or the training sequence plus the validation item (test), cut to
/// the last `max_len` items.
pub fn evaluate<T: Real, S: Scorer<T> + ?Sized>(
    scorer: &S,
    split: &DatasetSplit,
    phase: Phase,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if split.train.is_empty() {
        return Err(Error::Empty("no users to evaluate"));
    }
    let ranks: Vec<usize> = (0..split.train.len())
        .into_par_iter()
        .map(|i| {
            let mut full = split.train[i].items.clone();
            let target = match phase {
                Phase::Valid => split.valid[i],
                Phase::Test => {
                    full.push(split.valid[i]);
                    split.test[i]
                }
            };
            let context = &full[full.len().saturating_sub(cfg.max_len)..];
            let mut scores = scorer.score(context)?.scores;
            if cfg.filter_seen {
                for &v in &full {
                    if v != target {
                        scores[v as usize] = T::neg_infinity();
                    }
                }
            }
            Ok(rank_of_target(&scores, target))
        })
        .collect::<Result<_>>()?;
    MetricReport::from_ranks(ranks, cfg.keep_ranks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unique_max_is_rank_one() {
        assert_eq!(rank_of_target(&[f64::NEG_INFINITY, 0.1, 0.9, 0.3], 2), 1);
    }

    #[test]
    fn all_equal_breaks_ties_by_index() {
        let s = [f64::NEG_INFINITY, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(rank_of_target(&s, 3), 3);
    }

    #[test]
    fn nan_target_ranks_last() {
        assert_eq!(rank_of_target(&[f64::NEG_INFINITY, 0.1, f64::NAN, 0.3], 2), 3);
    }

    #[test]
    fn cutoff_metrics() {
        assert_eq!(metrics_from_rank(1, 10), (1.0, 1.0));
        assert_eq!(metrics_from_rank(3, 10), (1.0, 0.5));
        assert_eq!(metrics_from_rank(11, 10), (0.0, 0.0));
    }

    #[test]
    fn report_from_ranks_by_hand() {
        let r = MetricReport::from_ranks(vec![1, 3, 15, 40], true).unwrap();
        assert_eq!(r.hr10, 0.5);
        assert_eq!(r.hr20, 0.75);
        assert!((r.ndcg10 - 1.5 / 4.0).abs() < 1e-15);
        assert!((r.ndcg20 - (1.5 + 1.0 / 16f64.log2()) / 4.0).abs() < 1e-15);
        assert!(r.check_invariants());
        assert!(MetricReport::from_ranks(vec![], false).is_err());
    }
}
