//! Next-item scorers: two counting baselines and two trainable sequence
//! encoders with hand-written backward passes. Neural scorers use tied item
//! embeddings: `score(v) = hidden · item_embed[v]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, PADDING};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{dot, ParamSet, Tensor};

pub mod attn;
pub mod checkpoint;
pub mod counting;
pub mod gru;

pub use attn::{AttnCache, AttnConfig, AttnRec};
pub use counting::{Markov, Popularity};
pub use gru::{GruCache, GruConfig, GruRec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pop,
    Markov,
    Attn,
    Gru,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Pop => "pop",
            ModelKind::Markov => "markov",
            ModelKind::Attn => "attn",
            ModelKind::Gru => "gru",
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, ModelKind::Attn | ModelKind::Gru)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pop" | "popularity" => Ok(ModelKind::Pop),
            "markov" => Ok(ModelKind::Markov),
            "attn" | "attnrec" | "sasrec" => Ok(ModelKind::Attn),
            "gru" | "grurec" | "gru4rec" => Ok(ModelKind::Gru),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Which hidden states a forward pass must return.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Positions {
    Last,
    All,
}

/// Hidden states for a subset of the real (non-padding) positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Hidden<T> {
    /// Indices into the real positions of the input, ascending.
    pub rows: Vec<usize>,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Real> Hidden<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn zeros_like(&self) -> Self {
        Hidden { rows: self.rows.clone(), dim: self.dim, data: vec![T::zero(); self.data.len()] }
    }

    pub fn last(&self) -> &[T] {
        self.row(self.rows.len() - 1)
    }
}

/// Scores for every catalog slot; slot 0 (padding) is `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector<T> {
    pub scores: Vec<T>,
}

impl<T: Real> ScoreVector<T> {
    pub fn new(mut scores: Vec<T>) -> Self {
        if let Some(s) = scores.first_mut() {
            *s = T::neg_infinity();
        }
        ScoreVector { scores }
    }

    pub fn num_items(&self) -> usize {
        self.scores.len().saturating_sub(1)
    }
}

/// Anything that ranks the catalog given a user's recent history.
pub trait Scorer<T: Real>: Sync {
    fn num_items(&self) -> usize;

    /// `context` holds real items only, oldest first.
    fn score(&self, context: &[ItemId]) -> Result<ScoreVector<T>>;
}

/// A differentiable sequence encoder over left-padded inputs.
pub trait SequenceModel<T: Real>: Sync + Send {
    type Cache: Send;

    fn kind(&self) -> ModelKind;
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    fn max_len(&self) -> usize;
    fn dim(&self) -> usize;
    fn num_items(&self) -> usize;

    /// `input` must have length `max_len`; `0` entries are padding.
    fn forward(&self, input: &[ItemId], needed: Positions) -> Result<(Hidden<T>, Self::Cache)>;

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂hidden` in the layout of
    /// the forward output. Only the encoder path is covered here; the
    /// output-projection part of the item-embedding gradient comes from the
    /// loss.
    fn backward(&self, cache: &Self::Cache, grad_hidden: &Hidden<T>, grads: &mut ParamSet<T>) -> Result<()>;
}

/// Left-pads (or keeps the last `max_len` items of) a context.
pub fn pad_left(context: &[ItemId], max_len: usize) -> Vec<ItemId> {
    let ctx = &context[context.len().saturating_sub(max_len)..];
    let mut row = vec![PADDING; max_len - ctx.len()];
    row.extend_from_slice(ctx);
    row
}

/// Tied-embedding scores for one hidden vector.
pub fn tied_scores<T: Real>(params: &ParamSet<T>, hidden: &[T]) -> ScoreVector<T> {
    let emb = params.item_embed();
    let scores = (0..emb.rows).map(|v| if v == 0 { T::zero() } else { dot(emb.row(v), hidden) }).collect();
    ScoreVector::new(scores)
}

pub(crate) fn check_input(input: &[ItemId], max_len: usize, num_items: usize) -> Result<Vec<usize>> {
    if input.len() != max_len {
        return Err(Error::Shape(format!("input length {} != max_len {}", input.len(), max_len)));
    }
    if let Some(&bad) = input.iter().find(|&&v| v as usize > num_items) {
        return Err(Error::Shape(format!("item {bad} outside catalog of {num_items}")));
    }
    let real: Vec<usize> = (0..input.len()).filter(|&p| input[p] != PADDING).collect();
    if real.is_empty() {
        return Err(Error::Empty("all-padding input"));
    }
    Ok(real)
}

pub(crate) fn needed_rows(n: usize, needed: Positions) -> Vec<usize> {
    match needed {
        Positions::Last => vec![n - 1],
        Positions::All => (0..n).collect(),
    }
}

pub(crate) enum Init {
    Uniform,
    Zero,
    One,
}

/// `(name, rows, cols, init)` per tensor, item embedding first.
pub(crate) type Layout = Vec<(String, usize, usize, Init)>;

/// Uniform(±0.5/√d) weights, zero biases, unit gains, zero padding row.
pub(crate) fn init_params<T: Real, R: Rng + ?Sized>(layout: Layout, dim: usize, rng: &mut R) -> ParamSet<T> {
    let bound = 0.5 / (dim as f64).sqrt();
    let tensors = layout
        .into_iter()
        .map(|(name, rows, cols, init)| match init {
            Init::Uniform => Tensor::uniform(name, rows, cols, bound, rng),
            Init::Zero => Tensor::zeros(name, rows, cols),
            Init::One => Tensor::filled(name, rows, cols, T::one()),
        })
        .collect();
    let mut params = ParamSet { tensors };
    params.zero_padding_row();
    params
}

pub(crate) fn check_layout<T: Real>(layout: &Layout, params: &ParamSet<T>) -> Result<()> {
    if layout.len() != params.tensors.len()
        || layout.iter().zip(&params.tensors).any(|((_, r, c, _), t)| *r != t.rows || *c != t.cols)
    {
        return Err(Error::Shape("parameters do not match model config".into()));
    }
    Ok(())
}

/// Any of the four scorers behind one type.
#[derive(Clone, Debug)]
pub enum AnyModel<T> {
    Pop(Popularity),
    Markov(Markov),
    Attn(AttnRec<T>),
    Gru(GruRec<T>),
}

impl<T: Real> AnyModel<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Pop(_) => ModelKind::Pop,
            AnyModel::Markov(_) => ModelKind::Markov,
            AnyModel::Attn(_) => ModelKind::Attn,
            AnyModel::Gru(_) => ModelKind::Gru,
        }
    }
}

impl<T: Real> Scorer<T> for AnyModel<T> {
    fn num_items(&self) -> usize {
        match self {
            AnyModel::Pop(m) => Scorer::<T>::num_items(m),
            AnyModel::Markov(m) => Scorer::<T>::num_items(m),
            AnyModel::Attn(m) => Scorer::num_items(m),
            AnyModel::Gru(m) => Scorer::num_items(m),
        }
    }

    fn score(&self, context: &[ItemId]) -> Result<ScoreVector<T>> {
        match self {
            AnyModel::Pop(m) => m.score(context),
            AnyModel::Markov(m) => m.score(context),
            AnyModel::Attn(m) => m.score(context),
            AnyModel::Gru(m) => m.score(context),
        }
    }
}

macro_rules! neural_scorer {
    ($ty:ident) => {
        impl<T: Real> Scorer<T> for $ty<T> {
            fn num_items(&self) -> usize {
                SequenceModel::num_items(self)
            }

            fn score(&self, context: &[ItemId]) -> Result<ScoreVector<T>> {
                let input = pad_left(context, self.max_len());
                let (hidden, _) = self.forward(&input, Positions::Last)?;
                Ok(tied_scores(self.params(), hidden.last()))
            }
        }
    };
}

neural_scorer!(AttnRec);
neural_scorer!(GruRec);
