//! Seeded synthetic interaction logs with Zipf item popularity and a sparse
//! first-order transition structure, so that next-item prediction is
//! learnable but popularity alone is not enough.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Zipf};
use serde::{Deserialize, Serialize};

use super::Interaction;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub zipf_exponent: f64,
    pub min_len: usize,
    /// Mean number of items beyond `min_len`.
    pub mean_extra_len: f64,
    pub max_len: usize,
    /// Probability that the next item follows the previous item's successors.
    pub follow_prob: f64,
    pub successors_per_item: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 1200,
            num_items: 600,
            zipf_exponent: 1.0,
            min_len: 5,
            mean_extra_len: 5.0,
            max_len: 60,
            follow_prob: 0.6,
            successors_per_item: 2,
            seed: 2024,
        }
    }
}

pub fn generate(config: &SynthConfig) -> Result<Vec<Interaction>> {
    if config.num_items < 2 || config.num_users == 0 || config.min_len == 0 || config.successors_per_item == 0 {
        return Err(Error::Config("synthetic log needs ≥2 items, ≥1 user, min_len ≥1, ≥1 successor".into()));
    }
    if !(0.0..=1.0).contains(&config.follow_prob) {
        return Err(Error::Config("follow_prob must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let zipf = Zipf::new(config.num_items as f64, config.zipf_exponent)
        .map_err(|e| Error::Config(format!("zipf: {e}")))?;
    let extra = Geometric::new(1.0 / (1.0 + config.mean_extra_len.max(0.0)))
        .map_err(|e| Error::Config(format!("length distribution: {e}")))?;
    // Item ids are shuffled so that popularity rank is not the id order.
    let mut perm: Vec<u64> = (1..=config.num_items as u64).collect();
    for i in (1..perm.len()).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let draw = |rng: &mut ChaCha8Rng| -> usize { zipf.sample(rng) as usize - 1 };
    let successors: Vec<Vec<usize>> = (0..config.num_items)
        .map(|_| (0..config.successors_per_item).map(|_| draw(&mut rng)).collect())
        .collect();

    let mut out = Vec::new();
    for user in 1..=config.num_users as u64 {
        let len = (config.min_len + extra.sample(&mut rng) as usize).min(config.max_len.max(config.min_len));
        let mut prev = draw(&mut rng);
        for t in 0..len {
            if t > 0 {
                prev = if rng.random_bool(config.follow_prob) {
                    let s = &successors[prev];
                    s[rng.random_range(0..s.len())]
                } else {
                    draw(&mut rng)
                };
            }
            out.push(Interaction::new(user, perm[prev], t as u64));
        }
    }
    Ok(out)
}

/// Serializes interactions in the triplet log format.
pub fn to_triplet_log(interactions: &[Interaction]) -> String {
    let mut s = String::new();
    for it in interactions {
        s.push_str(&format!("{}\t{}\t{}\n", it.user, it.item, it.timestamp));
    }
    s
}
