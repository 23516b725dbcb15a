//! Mini-batch Adam training with deterministic parallel gradient reduction
//! and early stopping on a validation metric.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{TargetStrategy, TrainingSet};
use crate::corpus::{DatasetSplit, ItemId, UserId};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, Metric, Phase};
use crate::models::{
    pad_left, AnyModel, AttnConfig, AttnRec, GruConfig, GruRec, Markov, ModelKind, Popularity, Scorer, SequenceModel,
};
use crate::objective::{sample_negatives, sequence_loss_grad, LossKind, PositionTarget};
use crate::scalar::Real;
use crate::seed::stream;
use crate::tensor::ParamSet;

/// Units per gradient chunk. Chunks are summed in index order, so results do
/// not depend on the number of threads.
const CHUNK: usize = 16;

const STREAM_INIT: u64 = 0x1417;
const STREAM_SHUFFLE: u64 = 0x5AFF;
const STREAM_NEG: u64 = 0x4E67;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub early_stop: Metric,
    pub num_blocks: usize,
    pub num_heads: usize,
    /// A batch loss above this multiple of the first batch loss counts as
    /// divergence.
    pub divergence_factor: f64,
    pub filter_seen: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            max_len: 50,
            batch_size: 256,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            patience: 20,
            max_epochs: 500,
            seed: 0,
            loss: LossKind::Ce,
            early_stop: Metric::N10,
            num_blocks: 1,
            num_heads: 1,
            divergence_factor: 10.0,
            filter_seen: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive");
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return bad("patience, max_epochs and batch_size must be ≥ 1");
        }
        if self.dim == 0 || self.max_len < 2 {
            return bad("dim must be ≥ 1 and max_len ≥ 2");
        }
        if !(self.divergence_factor > 1.0) {
            return bad("divergence_factor must exceed 1");
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { max_len: self.max_len, filter_seen: self.filter_seen, keep_ranks: false }
    }
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One Adam update; the padding embedding row is re-zeroed afterwards.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    params.check_same_shape(grads)?;
    params.check_same_shape(&state.m)?;
    if !grads.all_finite() {
        return Err(Error::Diverged(format!("non-finite gradient at step {}", state.t + 1)));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(t));
    let c2 = T::lit(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.adam_epsilon));
    for (((p, g), m), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(&mut state.m.tensors).zip(&mut state.v.tensors) {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
            v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
            let mhat = m.data[i] / c1;
            let vhat = v.data[i] / c2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    params.zero_padding_row();
    Ok(())
}

/// One training row: a real-item input and the supervised positions
/// (indices into `input`) with their next items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingUnit {
    pub user: UserId,
    pub input: Vec<ItemId>,
    pub targets: Vec<(usize, ItemId)>,
}

/// Single: supervise the last position of each sub-sequence. Multi: every
/// position, which yields exactly the expanded pair multiset.
pub fn training_units(ts: &TrainingSet) -> Vec<TrainingUnit> {
    ts.subsequences
        .iter()
        .filter(|s| s.items.len() >= 2)
        .map(|s| {
            let n = s.items.len();
            let targets = match ts.strategy {
                TargetStrategy::Single => vec![(n - 2, s.items[n - 1])],
                TargetStrategy::Multi => (0..n - 1).map(|i| (i, s.items[i + 1])).collect(),
            };
            TrainingUnit { user: s.user, input: s.items[..n - 1].to_vec(), targets }
        })
        .collect()
}

/// Left-padded rows plus `(row, padded position, target)` triples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PaddedBatch {
    pub max_len: usize,
    pub inputs: Vec<Vec<ItemId>>,
    pub targets: Vec<(usize, usize, ItemId)>,
}

pub fn pad_batch(units: &[&TrainingUnit], max_len: usize) -> Result<PaddedBatch> {
    let mut batch = PaddedBatch { max_len, ..Default::default() };
    for (r, u) in units.iter().enumerate() {
        if u.input.len() > max_len {
            return Err(Error::Shape(format!("input of length {} exceeds max_len {max_len}", u.input.len())));
        }
        let offset = max_len - u.input.len();
        batch.inputs.push(pad_left(&u.input, max_len));
        batch.targets.extend(u.targets.iter().map(|&(p, t)| (r, offset + p, t)));
    }
    Ok(batch)
}

/// Stop after `patience` epochs without strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::NEG_INFINITY, best_epoch: 0, epoch: 0 }
    }

    /// Records one epoch; returns `(improved, stop)`.
    pub fn observe(&mut self, metric: f64) -> (bool, bool) {
        self.epoch += 1;
        let improved = metric > self.best;
        if improved {
            self.best = metric;
            self.best_epoch = self.epoch;
        }
        (improved, self.epoch - self.best_epoch >= self.patience)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelKind,
    pub epochs: usize,
    pub best_epoch: usize,
    pub early_stop: Metric,
    pub best_valid: f64,
    pub seconds: f64,
    pub units: usize,
    pub train_losses: Vec<f64>,
    pub valid_history: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<String>,
}

/// Per-epoch progress passed to an observer.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: f64,
    pub improved: bool,
}

fn user_exclusions(split: &DatasetSplit) -> Vec<Vec<ItemId>> {
    let max_user = split.train.iter().map(|s| s.user as usize).max().unwrap_or(0);
    let mut out = vec![Vec::new(); max_user + 1];
    for s in &split.train {
        let mut items = s.items.clone();
        items.sort_unstable();
        items.dedup();
        out[s.user as usize] = items;
    }
    out
}

struct ChunkResult<T> {
    loss: f64,
    count: usize,
    grads: ParamSet<T>,
}

fn chunk_grads<T: Real, M: SequenceModel<T>>(
    model: &M,
    units: &[TrainingUnit],
    indices: &[usize],
    exclusions: &[Vec<ItemId>],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<ChunkResult<T>> {
    let mut grads = model.params().zeros_like();
    let mut loss = 0.0;
    let mut count = 0;
    let empty = Vec::new();
    for &idx in indices {
        let unit = &units[idx];
        let batch = pad_batch(&[unit], cfg.max_len)?;
        let offset = cfg.max_len - unit.input.len();
        let mut rng = stream(&[cfg.seed, STREAM_NEG, epoch as u64, idx as u64]);
        let excl = exclusions.get(unit.user as usize).unwrap_or(&empty);
        let targets = batch
            .targets
            .iter()
            .map(|&(_, pos, target)| {
                let negatives = match cfg.loss {
                    LossKind::Ce => Vec::new(),
                    LossKind::Bce { negatives } => {
                        sample_negatives(&mut rng, model.num_items(), target, negatives, excl)?
                    }
                };
                Ok(PositionTarget { row: pos - offset, target, negatives })
            })
            .collect::<Result<Vec<_>>>()?;
        loss += sequence_loss_grad(model, &batch.inputs[0], &targets, cfg.loss, &mut grads)?.as_f64();
        count += targets.len();
    }
    Ok(ChunkResult { loss, count, grads })
}

/// Mean loss and mean gradient over one batch of unit indices.
pub fn batch_loss_grad<T: Real, M: SequenceModel<T>>(
    model: &M,
    units: &[TrainingUnit],
    batch: &[usize],
    exclusions: &[Vec<ItemId>],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, ParamSet<T>)> {
    let parts: Vec<ChunkResult<T>> = batch
        .par_chunks(CHUNK)
        .map(|c| chunk_grads(model, units, c, exclusions, cfg, epoch))
        .collect::<Result<_>>()?;
    let mut parts = parts.into_iter();
    let first = parts.next().ok_or(Error::Empty("empty batch"))?;
    let (mut loss, mut count, mut grads) = (first.loss, first.count, first.grads);
    for p in parts {
        loss += p.loss;
        count += p.count;
        grads.add_assign(&p.grads);
    }
    if count == 0 {
        return Err(Error::Empty("batch without targets"));
    }
    grads.scale(T::lit(1.0 / count as f64));
    Ok((loss / count as f64, grads))
}

/// Trains `model` in place of a copy; returns the parameters from the best
/// validation epoch.
pub fn train_neural<T, M>(
    mut model: M,
    units: &[TrainingUnit],
    split: &DatasetSplit,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<(M, TrainReport)>
where
    T: Real,
    M: SequenceModel<T> + Scorer<T> + Clone,
{
    cfg.validate()?;
    if units.is_empty() {
        return Err(Error::Empty("no training units"));
    }
    let start = Instant::now();
    let exclusions = user_exclusions(split);
    let eval_cfg = cfg.eval_config();
    let mut adam = AdamState::new(model.params());
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = model.clone();
    let mut first_loss: Option<f64> = None;
    let mut train_losses = Vec::new();
    let mut valid_history = Vec::new();
    let mut order: Vec<usize> = (0..units.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(&[cfg.seed, STREAM_SHUFFLE, epoch as u64]));
        let (mut sum, mut batches) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_loss_grad(&model, units, batch, &exclusions, cfg, epoch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
            }
            let reference = *first_loss.get_or_insert(loss);
            if loss > cfg.divergence_factor * reference.max(1e-6) {
                return Err(Error::Diverged(format!(
                    "batch loss {loss:.4} exceeds {}× the initial {reference:.4} in epoch {epoch}",
                    cfg.divergence_factor
                )));
            }
            adam_step(model.params_mut(), &grads, &mut adam, cfg)?;
            sum += loss;
            batches += 1;
        }
        let train_loss = sum / batches as f64;
        let valid = evaluate(&model, split, Phase::Valid, &eval_cfg)?.get(cfg.early_stop);
        train_losses.push(train_loss);
        valid_history.push(valid);
        let (improved, stop) = stopper.observe(valid);
        if improved {
            best = model.clone();
        }
        observer(&EpochLog { epoch, train_loss, valid, improved });
        if stop {
            break;
        }
    }
    let report = TrainReport {
        model: model.kind(),
        epochs: stopper.epoch,
        best_epoch: stopper.best_epoch,
        early_stop: cfg.early_stop,
        best_valid: stopper.best,
        seconds: start.elapsed().as_secs_f64(),
        units: units.len(),
        train_losses,
        valid_history,
        checkpoint: None,
    };
    Ok((best, report))
}

/// Fits a counting model or trains a neural one from `ts`.
pub fn train_model<T: Real>(
    kind: ModelKind,
    ts: &TrainingSet,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(AnyModel<T>, TrainReport)> {
    train_model_observed(kind, ts, split, cfg, &mut |_| {})
}

pub fn train_model_observed<T: Real>(
    kind: ModelKind,
    ts: &TrainingSet,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<(AnyModel<T>, TrainReport)> {
    cfg.validate()?;
    let n = split.num_items;
    let mut init = stream(&[cfg.seed, STREAM_INIT]);
    match kind {
        ModelKind::Pop | ModelKind::Markov => {
            let start = Instant::now();
            let model: AnyModel<T> = match kind {
                ModelKind::Pop => AnyModel::Pop(Popularity::fit(ts, n)?),
                _ => AnyModel::Markov(Markov::fit(ts, n)?),
            };
            let valid = evaluate(&model, split, Phase::Valid, &cfg.eval_config())?.get(cfg.early_stop);
            let report = TrainReport {
                model: kind,
                epochs: 0,
                best_epoch: 0,
                early_stop: cfg.early_stop,
                best_valid: valid,
                seconds: start.elapsed().as_secs_f64(),
                units: ts.len(),
                train_losses: Vec::new(),
                valid_history: vec![valid],
                checkpoint: None,
            };
            Ok((model, report))
        }
        ModelKind::Attn => {
            let mut ac = AttnConfig::new(n, cfg.dim, cfg.max_len);
            ac.num_blocks = cfg.num_blocks;
            ac.num_heads = cfg.num_heads;
            let model = AttnRec::new(ac, &mut init)?;
            let (m, r) = train_neural(model, &training_units(ts), split, cfg, observer)?;
            Ok((AnyModel::Attn(m), r))
        }
        ModelKind::Gru => {
            let model = GruRec::new(GruConfig::new(n, cfg.dim, cfg.max_len), &mut init)?;
            let (m, r) = train_neural(model, &training_units(ts), split, cfg, observer)?;
            Ok((AnyModel::Gru(m), r))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{build_from_sequences, SplitMethod};
    use crate::corpus::UserSequence;

    #[test]
    fn pad_batch_examples() {
        let u = TrainingUnit { user: 1, input: vec![1, 2], targets: vec![(1, 3)] };
        let b = pad_batch(&[&u], 4).unwrap();
        assert_eq!(b.inputs, vec![vec![0, 0, 1, 2]]);
        assert_eq!(b.targets, vec![(0, 3, 3)]);
        assert_eq!(pad_batch(&[], 4).unwrap().inputs.len(), 0);
    }

    #[test]
    fn multi_unit_marks_every_position() {
        let seqs = vec![UserSequence { user: 1, items: vec![1, 2, 3] }];
        let ts = build_from_sequences(&seqs, SplitMethod::Original, TargetStrategy::Multi, 4).unwrap();
        let units = training_units(&ts);
        assert_eq!(units, vec![TrainingUnit { user: 1, input: vec![1, 2], targets: vec![(0, 2), (1, 3)] }]);
        let b = pad_batch(&[&units[0]], 4).unwrap();
        assert_eq!(b.inputs[0], vec![0, 0, 1, 2]);
        assert_eq!(b.targets, vec![(0, 2, 2), (0, 3, 3)]);
    }

    #[test]
    fn stopper_with_patience_one() {
        let mut s = EarlyStopper::new(1);
        assert_eq!(s.observe(0.5), (true, false));
        assert_eq!(s.observe(0.4), (false, true));
        assert_eq!((s.epoch, s.best_epoch), (2, 1));
    }

    #[test]
    fn adam_first_step_closed_form() {
        // row 0 is the padding row and must stay zero
        let mut p = ParamSet { tensors: vec![crate::tensor::Tensor::filled("item_embed", 2, 3, 0.5f64)] };
        let g = ParamSet {
            tensors: vec![crate::tensor::Tensor { name: "g".into(), rows: 2, cols: 3, data: vec![1.0, 1.0, 1.0, 0.2, -3.0, 0.0] }],
        };
        let cfg = TrainConfig::default();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert_eq!(p.tensors[0].row(0), &[0.0; 3]);
        for (x, gi) in p.tensors[0].row(1).iter().zip(g.tensors[0].row(1)) {
            let expect = 0.5 - cfg.lr * gi / (gi.abs() + cfg.adam_epsilon);
            assert!((x - expect).abs() < 1e-15, "{x} vs {expect}");
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = ParamSet { tensors: vec![crate::tensor::Tensor::filled("w", 1, 1, 0.5f64)] };
        let g = ParamSet { tensors: vec![crate::tensor::Tensor::filled("w", 1, 1, f64::NAN)] };
        let mut st = AdamState::new(&p);
        assert!(matches!(adam_step(&mut p, &g, &mut st, &TrainConfig::default()), Err(Error::Diverged(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
    }
}
