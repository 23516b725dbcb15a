//! Training losses over tied item embeddings and the finite-difference
//! gradient oracle.
//!
//! Both losses read a hidden vector `h` and the item-embedding table `E`;
//! logits are `r_v = h · E[v]` for `v ∈ 1..=N` (slot 0 is padding and never
//! scored). Gradients are *accumulated* into the caller's buffers.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, PADDING};
use crate::error::{Error, Result};
use crate::models::{Positions, SequenceModel};
use crate::scalar::{neg_log_sigmoid, sigmoid, Real};
use crate::tensor::{dot, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossKind {
    /// Full-catalog softmax cross-entropy.
    Ce,
    /// Binary cross-entropy against uniformly sampled negatives.
    Bce { negatives: usize },
}

impl LossKind {
    pub fn bce(negatives: usize) -> Result<Self> {
        if negatives == 0 {
            return Err(Error::Config("BCE needs at least one negative".into()));
        }
        Ok(LossKind::Bce { negatives })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Bce { .. } => "bce",
        }
    }

    pub fn num_negatives(&self) -> usize {
        match self {
            LossKind::Ce => 0,
            LossKind::Bce { negatives } => *negatives,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Ce => f.write_str("ce"),
            LossKind::Bce { negatives: 1 } => f.write_str("bce"),
            LossKind::Bce { negatives } => write!(f, "bce:{negatives}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "ce" => Ok(LossKind::Ce),
            "bce" => Ok(LossKind::Bce { negatives: 1 }),
            _ => match s.strip_prefix("bce:") {
                Some(n) => LossKind::bce(n.parse().map_err(|_| Error::Config(format!("bad negative count `{n}`")))?),
                None => Err(Error::Config(format!("unknown loss `{s}`"))),
            },
        }
    }
}

impl TryFrom<String> for LossKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossKind> for String {
    fn from(l: LossKind) -> String {
        l.to_string()
    }
}

fn check_target(target: ItemId, num_items: usize) -> Result<()> {
    if target == PADDING {
        return Err(Error::PaddingTarget);
    }
    if target as usize > num_items {
        return Err(Error::Shape(format!("target {target} outside catalog of {num_items}")));
    }
    Ok(())
}

/// Softmax cross-entropy over a logit vector. `logits[i]` belongs to item
/// `i + 1`. Returns the loss and `∂L/∂logits`.
pub fn softmax_ce<T: Real>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut probs: Vec<T> = logits.iter().map(|&r| (r - max).exp()).collect();
    let z: T = probs.iter().copied().sum();
    let lse = max + z.ln();
    for p in probs.iter_mut() {
        *p /= z;
    }
    probs[target] -= T::one();
    (lse - logits[target], probs)
}

/// `−log softmax(h·Eᵀ)[target]` with the padding logit excluded.
pub fn ce_loss_grad<T: Real>(
    hidden: &[T],
    embed: &Tensor<T>,
    target: ItemId,
    grad_hidden: &mut [T],
    grad_embed: &mut Tensor<T>,
) -> Result<T> {
    let n = embed.rows.saturating_sub(1);
    check_target(target, n)?;
    let logits: Vec<T> = (1..=n).map(|v| dot(hidden, embed.row(v))).collect();
    let (loss, dlogits) = softmax_ce(&logits, target as usize - 1);
    for (i, &g) in dlogits.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        let v = i + 1;
        for (gh, &e) in grad_hidden.iter_mut().zip(embed.row(v)) {
            *gh += g * e;
        }
        for (ge, &h) in grad_embed.row_mut(v).iter_mut().zip(hidden) {
            *ge += g * h;
        }
    }
    Ok(loss)
}

/// Draws up to `count` distinct negatives uniformly from
/// `{1..=num_items} \ exclusion \ {target}`. `exclusion` must be sorted.
pub fn sample_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    num_items: usize,
    target: ItemId,
    count: usize,
    exclusion: &[ItemId],
) -> Result<Vec<ItemId>> {
    let banned = |v: ItemId| v == target || exclusion.binary_search(&v).is_ok();
    let excluded = exclusion.iter().filter(|&&v| v != PADDING && (v as usize) <= num_items).count()
        + usize::from(exclusion.binary_search(&target).is_err() && target != PADDING);
    let allowed = num_items.saturating_sub(excluded);
    if allowed == 0 {
        return Err(Error::NoNegative);
    }
    let k = count.min(allowed);
    if allowed * 4 >= num_items {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let v = rng.random_range(1..=num_items as ItemId);
            if !banned(v) && !out.contains(&v) {
                out.push(v);
            }
        }
        Ok(out)
    } else {
        let pool: Vec<ItemId> = (1..=num_items as ItemId).filter(|&v| !banned(v)).collect();
        Ok(index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
    }
}

/// `−log σ(r_target) − Σ log(1 − σ(r_neg))` for a fixed negative list.
pub fn bce_loss_grad<T: Real>(
    hidden: &[T],
    embed: &Tensor<T>,
    target: ItemId,
    negatives: &[ItemId],
    grad_hidden: &mut [T],
    grad_embed: &mut Tensor<T>,
) -> Result<T> {
    let n = embed.rows.saturating_sub(1);
    check_target(target, n)?;
    if negatives.is_empty() {
        return Err(Error::NoNegative);
    }
    let mut loss = T::zero();
    let mut term = |v: ItemId, positive: bool| -> Result<()> {
        check_target(v, n)?;
        let r = dot(hidden, embed.row(v as usize));
        let g = if positive {
            loss += neg_log_sigmoid(r);
            sigmoid(r) - T::one()
        } else {
            loss += neg_log_sigmoid(-r);
            sigmoid(r)
        };
        for (gh, &e) in grad_hidden.iter_mut().zip(embed.row(v as usize)) {
            *gh += g * e;
        }
        for (ge, &h) in grad_embed.row_mut(v as usize).iter_mut().zip(hidden) {
            *ge += g * h;
        }
        Ok(())
    };
    term(target, true)?;
    for &neg in negatives {
        term(neg, false)?;
    }
    Ok(loss)
}

/// Samples negatives, then evaluates [`bce_loss_grad`]. The negatives are
/// returned so the step can be replayed.
#[allow(clippy::too_many_arguments)]
pub fn bce_loss_grad_sampled<T: Real, R: Rng + ?Sized>(
    hidden: &[T],
    embed: &Tensor<T>,
    target: ItemId,
    rng: &mut R,
    num_negatives: usize,
    exclusion: &[ItemId],
    grad_hidden: &mut [T],
    grad_embed: &mut Tensor<T>,
) -> Result<(T, Vec<ItemId>)> {
    let negatives = sample_negatives(rng, embed.rows.saturating_sub(1), target, num_negatives, exclusion)?;
    let loss = bce_loss_grad(hidden, embed, target, &negatives, grad_hidden, grad_embed)?;
    Ok((loss, negatives))
}

/// One supervised position of a training row. `row` indexes the real
/// (non-padding) positions, oldest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositionTarget {
    pub row: usize,
    pub target: ItemId,
    /// Ignored under CE.
    pub negatives: Vec<ItemId>,
}

/// Forward, loss and backward for one left-padded row. Returns the summed
/// loss over `targets`; gradients are added to `grads` unscaled.
pub fn sequence_loss_grad<T: Real, M: SequenceModel<T>>(
    model: &M,
    input: &[ItemId],
    targets: &[PositionTarget],
    loss: LossKind,
    grads: &mut ParamSet<T>,
) -> Result<T> {
    let real = input.iter().filter(|&&v| v != PADDING).count();
    if targets.iter().any(|t| t.row >= real) {
        return Err(Error::Shape("target row beyond the real positions".into()));
    }
    let needed = if targets.iter().all(|t| t.row + 1 == real) { Positions::Last } else { Positions::All };
    let (hidden, cache) = model.forward(input, needed)?;
    let mut grad_hidden = hidden.zeros_like();
    let embed = model.params().item_embed();
    let dim = hidden.dim;
    let mut total = T::zero();
    for t in targets {
        let idx = match needed {
            Positions::Last => 0,
            Positions::All => t.row,
        };
        let h = hidden.row(idx);
        let gh = &mut grad_hidden.data[idx * dim..(idx + 1) * dim];
        let ge = grads.item_embed_mut();
        total += match loss {
            LossKind::Ce => ce_loss_grad(h, embed, t.target, gh, ge)?,
            LossKind::Bce { .. } => bce_loss_grad(h, embed, t.target, &t.negatives, gh, ge)?,
        };
    }
    model.backward(&cache, &grad_hidden, grads)?;
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per matrix; vectors (biases, gains) are always
    /// checked in full, as are matrices no larger than this.
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { step: 1e-5, tolerance: 1e-4, samples_per_tensor: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate and both gradient values there.
    pub worst: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

/// Compares `analytic` against central differences of `loss` around
/// `params`.
pub fn finite_diff_check<F>(
    params: &ParamSet<f64>,
    analytic: &ParamSet<f64>,
    mut loss: F,
    cfg: &FdConfig,
) -> Result<FdReport>
where
    F: FnMut(&ParamSet<f64>) -> Result<f64>,
{
    params.check_same_shape(analytic)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut tensors = Vec::with_capacity(params.tensors.len());
    let mut eval = |p: &ParamSet<f64>| -> Result<f64> {
        let l = loss(p)?;
        if !l.is_finite() {
            return Err(Error::NonFinite("loss during finite differences".into()));
        }
        Ok(l)
    };
    for (ti, tensor) in params.tensors.iter().enumerate() {
        let len = tensor.len();
        let coords: Vec<usize> = if tensor.is_vector() || len <= cfg.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut c = index::sample(&mut rng, len, cfg.samples_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let mut max_err = 0.0f64;
        let (mut worst, mut worst_a, mut worst_n) = (0, 0.0, 0.0);
        for &c in &coords {
            let orig = tensor.data[c];
            work.tensors[ti].data[c] = orig + cfg.step;
            let up = eval(&work)?;
            work.tensors[ti].data[c] = orig - cfg.step;
            let down = eval(&work)?;
            work.tensors[ti].data[c] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic.tensors[ti].data[c];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > max_err {
                max_err = err;
                (worst, worst_a, worst_n) = (c, a, numeric);
            }
        }
        tensors.push(TensorCheck { name: tensor.name.clone(), coordinates: coords.len(), max_rel_error: max_err,
            worst,
            worst_analytic: worst_a,
            worst_numeric: worst_n,
        });
    }
    Ok(FdReport { tensors, tolerance: cfg.tolerance })
}

/// One row for a model-level gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct FdCase {
    /// Left-padded to the model's `max_len`.
    pub input: Vec<ItemId>,
    pub targets: Vec<PositionTarget>,
}

/// Runs [`finite_diff_check`] on the summed loss of `cases`. Negatives in
/// the cases stay frozen across perturbations.
pub fn check_model_gradients<M: SequenceModel<f64> + Clone>(
    model: &M,
    cases: &[FdCase],
    loss: LossKind,
    cfg: &FdConfig,
) -> Result<FdReport> {
    let total = |m: &M, grads: &mut ParamSet<f64>| -> Result<f64> {
        cases.iter().map(|c| sequence_loss_grad(m, &c.input, &c.targets, loss, grads)).sum()
    };
    let mut analytic = model.params().zeros_like();
    total(model, &mut analytic)?;
    let mut probe = model.clone();
    let mut scratch = model.params().zeros_like();
    finite_diff_check(
        model.params(),
        &analytic,
        |p| {
            probe.params_mut().clone_from(p);
            total(&probe, &mut scratch)
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn embed(rows: &[[f64; 2]]) -> Tensor<f64> {
        let mut t = Tensor::zeros("item_embed", rows.len(), 2);
        for (r, row) in rows.iter().enumerate() {
            t.row_mut(r).copy_from_slice(row);
        }
        t
    }

    #[test]
    fn loss_kind_round_trips() {
        for s in ["ce", "bce", "bce:3"] {
            assert_eq!(s.parse::<LossKind>().unwrap().to_string(), s);
        }
        assert!("bce:0".parse::<LossKind>().is_err());
        assert!("mse".parse::<LossKind>().is_err());
    }

    #[test]
    fn ce_equal_logits_is_ln2_and_symmetric() {
        let e = embed(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        let h = [0.3, -0.2];
        let mut gh = [0.0; 2];
        let mut ge = Tensor::zeros("g", 3, 2);
        let l = ce_loss_grad(&h, &e, 1, &mut gh, &mut ge).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(ge.row(1)[0], -ge.row(2)[0]);
        assert!(ge.row(1)[0] < 0.0);
        assert_eq!(gh, [0.0, 0.0]);
    }

    #[test]
    fn ce_single_item_catalog_is_zero() {
        let e = embed(&[[0.0, 0.0], [0.4, 0.9]]);
        let mut gh = [0.0; 2];
        let mut ge = Tensor::zeros("g", 2, 2);
        let l = ce_loss_grad(&[1.0, 2.0], &e, 1, &mut gh, &mut ge).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(gh, [0.0, 0.0]);
        assert!(ge.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ce_rejects_padding_target() {
        let e = embed(&[[0.0, 0.0], [1.0, 0.0]]);
        let mut ge = Tensor::zeros("g", 2, 2);
        assert!(matches!(ce_loss_grad(&[1.0, 0.0], &e, 0, &mut [0.0; 2], &mut ge), Err(Error::PaddingTarget)));
    }

    #[test]
    fn softmax_shift_invariance_and_zero_sum() {
        let logits = [0.3, -1.2, 2.5, 0.0];
        let (l1, g1) = softmax_ce(&logits, 2);
        let shifted: Vec<f64> = logits.iter().map(|x| x + 17.0).collect();
        let (l2, _) = softmax_ce(&shifted, 2);
        assert!((l1 - l2).abs() < 1e-10);
        assert!(g1.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn bce_at_zero_is_two_ln2() {
        let e = embed(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let mut ge = Tensor::zeros("g", 3, 2);
        let l = bce_loss_grad(&[1.0, 1.0], &e, 1, &[2], &mut [0.0; 2], &mut ge).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn forced_negative_and_no_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // catalog 1..=5, target 1, exclusion leaves only item 4
        for _ in 0..20 {
            assert_eq!(sample_negatives(&mut rng, 5, 1, 1, &[1, 2, 3, 5]).unwrap(), vec![4]);
        }
        assert!(matches!(sample_negatives(&mut rng, 3, 1, 1, &[2, 3]), Err(Error::NoNegative)));
    }

    #[test]
    fn negatives_are_distinct_and_allowed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let neg = sample_negatives(&mut rng, 30, 7, 5, &[2, 7, 9]).unwrap();
            assert_eq!(neg.len(), 5);
            let mut s = neg.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 5);
            assert!(neg.iter().all(|v| ![0, 2, 7, 9].contains(v) && *v <= 30));
        }
    }

    #[test]
    fn sampled_bce_replays_under_same_seed() {
        let e = embed(&[[0.0, 0.0], [0.1, 0.2], [0.3, -0.1], [0.5, 0.5], [-0.2, 0.4]]);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut ge = Tensor::zeros("g", 5, 2);
            bce_loss_grad_sampled(&[0.7, -0.3], &e, 2, &mut rng, 2, &[2], &mut [0.0; 2], &mut ge).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn harness_is_exact_on_quadratic() {
        let mut p = ParamSet { tensors: vec![Tensor::zeros("w", 3, 4)] };
        for (i, x) in p.tensors[0].data.iter_mut().enumerate() {
            *x = i as f64 * 0.37 - 1.5;
        }
        let mut g = p.zeros_like();
        for (gx, &x) in g.tensors[0].data.iter_mut().zip(&p.tensors[0].data) {
            *gx = 2.0 * x;
        }
        let f = |q: &ParamSet<f64>| Ok(q.tensors[0].data.iter().map(|x| x * x).sum());
        let report = finite_diff_check(&p, &g, f, &FdConfig::default()).unwrap();
        assert!(report.max_rel_error() < 1e-8, "{report:?}");
    }

    #[test]
    fn harness_flags_wrong_gradient() {
        let p = ParamSet { tensors: vec![Tensor::filled("w", 1, 2, 1.0)] };
        let g = ParamSet { tensors: vec![Tensor::filled("w", 1, 2, 1.0)] };
        let f = |q: &ParamSet<f64>| Ok(q.tensors[0].data.iter().map(|x| x * x).sum());
        assert!(!finite_diff_check(&p, &g, f, &FdConfig::default()).unwrap().passed());
    }
}
