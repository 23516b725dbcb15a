//! Count-based baselines. Neither has trainable parameters; both are fit in
//! one pass over a training set.

use std::collections::HashMap;

use super::{ScoreVector, Scorer};
use crate::augment::TrainingSet;
use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `score(v)` = number of training examples whose target is `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Popularity {
    pub counts: Vec<u64>,
}

impl Popularity {
    pub fn fit(train: &TrainingSet, num_items: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut counts = vec![0u64; num_items + 1];
        for ex in &train.examples {
            let slot = counts
                .get_mut(ex.target as usize)
                .ok_or_else(|| Error::Shape(format!("target {} outside catalog", ex.target)))?;
            *slot += 1;
        }
        Ok(Popularity { counts })
    }

    fn scores<T: Real>(&self) -> ScoreVector<T> {
        ScoreVector::new(self.counts.iter().map(|&c| T::lit(c as f64)).collect())
    }
}

impl<T: Real> Scorer<T> for Popularity {
    fn num_items(&self) -> usize {
        self.counts.len() - 1
    }

    fn score(&self, _context: &[ItemId]) -> Result<ScoreVector<T>> {
        Ok(self.scores())
    }
}

/// First-order transitions: `score(v | u)` = number of examples whose input
/// ends in `u` and whose target is `v`. Unseen `u` falls back to popularity.
#[derive(Clone, Debug, PartialEq)]
pub struct Markov {
    pub transitions: HashMap<ItemId, Vec<(ItemId, u64)>>,
    pub popularity: Popularity,
}

impl Markov {
    pub fn fit(train: &TrainingSet, num_items: usize) -> Result<Self> {
        let popularity = Popularity::fit(train, num_items)?;
        let mut counts: HashMap<ItemId, HashMap<ItemId, u64>> = HashMap::new();
        for ex in &train.examples {
            if let Some(&last) = ex.input.last() {
                *counts.entry(last).or_default().entry(ex.target).or_default() += 1;
            }
        }
        let transitions = counts
            .into_iter()
            .map(|(u, row)| {
                let mut row: Vec<(ItemId, u64)> = row.into_iter().collect();
                row.sort_unstable();
                (u, row)
            })
            .collect();
        Ok(Markov { transitions, popularity })
    }
}

impl<T: Real> Scorer<T> for Markov {
    fn num_items(&self) -> usize {
        self.popularity.counts.len() - 1
    }

    fn score(&self, context: &[ItemId]) -> Result<ScoreVector<T>> {
        let row = context.last().and_then(|u| self.transitions.get(u));
        match row {
            None => Ok(self.popularity.scores()),
            Some(row) => {
                let mut scores = vec![T::zero(); self.popularity.counts.len()];
                for &(v, c) in row {
                    scores[v as usize] = T::lit(c as f64);
                }
                Ok(ScoreVector::new(scores))
            }
        }
    }
}
