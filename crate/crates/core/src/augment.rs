//! Sub-sequence splitting, target strategies and training-set construction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, ItemId, UserId, UserSequence, PADDING};
use crate::error::{Error, Result};

/// Window length used for `sliding` when none is given.
pub const DEFAULT_WINDOW: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitMethod {
    Original,
    Prefix,
    Suffix,
    Sliding(usize),
}

impl SplitMethod {
    pub fn sliding(window: usize) -> Result<Self> {
        if window < 2 {
            return Err(Error::Config(format!("sliding window must be ≥ 2, got {window}")));
        }
        Ok(SplitMethod::Sliding(window))
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplitMethod::Original => "original",
            SplitMethod::Prefix => "prefix",
            SplitMethod::Suffix => "suffix",
            SplitMethod::Sliding(_) => "sliding",
        }
    }

    pub fn window(&self) -> Option<usize> {
        match self {
            SplitMethod::Sliding(t) => Some(*t),
            _ => None,
        }
    }
}

impl fmt::Display for SplitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitMethod::Sliding(t) => write!(f, "sliding:{t}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Accepts `original`, `prefix`, `suffix`, `sliding` and `sliding:T`.
impl FromStr for SplitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "original" => Ok(SplitMethod::Original),
            "prefix" => Ok(SplitMethod::Prefix),
            "suffix" => Ok(SplitMethod::Suffix),
            "sliding" | "slide" => SplitMethod::sliding(DEFAULT_WINDOW),
            _ => match s.strip_prefix("sliding:") {
                Some(t) => {
                    let t = t.parse().map_err(|_| Error::Config(format!("bad window in `{s}`")))?;
                    SplitMethod::sliding(t)
                }
                None => Err(Error::Config(format!("unknown split method `{s}`"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetStrategy {
    Single,
    Multi,
}

impl TargetStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            TargetStrategy::Single => "single",
            TargetStrategy::Multi => "multi",
        }
    }
}

impl fmt::Display for TargetStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(TargetStrategy::Single),
            "multi" => Ok(TargetStrategy::Multi),
            other => Err(Error::Config(format!("unknown target strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainingExample {
    pub input: Vec<ItemId>,
    pub target: ItemId,
}

/// A contiguous slice of one user's training sequence, as produced by a
/// split method.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub method: SplitMethod,
    pub strategy: TargetStrategy,
    /// Every sub-sequence that produced at least one example, in build order.
    /// Under `Single`, `examples[i]` comes from `subsequences[i]`.
    pub subsequences: Vec<SubSequence>,
    pub examples: Vec<TrainingExample>,
    pub per_user_counts: Vec<(UserId, usize)>,
    /// Sequences (or, for the legacy replica, length-1 prefixes) that could
    /// not form an input-target pair.
    pub skipped: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Splits one sequence into contiguous sub-sequences.
pub fn split_sequence(items: &[ItemId], method: SplitMethod) -> Result<Vec<&[ItemId]>> {
    let n = items.len();
    match method {
        SplitMethod::Original => {
            if n == 0 {
                return Err(Error::TooShort(0));
            }
            Ok(vec![items])
        }
        SplitMethod::Prefix => {
            if n < 2 {
                return Err(Error::TooShort(n));
            }
            Ok((2..=n).map(|end| &items[..end]).collect())
        }
        SplitMethod::Suffix => {
            if n < 2 {
                return Err(Error::TooShort(n));
            }
            Ok((0..=n - 2).rev().map(|start| &items[start..]).collect())
        }
        SplitMethod::Sliding(t) => {
            if t < 2 {
                return Err(Error::Config(format!("sliding window must be ≥ 2, got {t}")));
            }
            if n == 0 {
                return Err(Error::TooShort(0));
            }
            if t >= n {
                return Ok(vec![items]);
            }
            Ok(items.windows(t).collect())
        }
    }
}

/// Turns one sub-sequence into input-target pairs.
pub fn expand_targets(sub: &[ItemId], strategy: TargetStrategy) -> Result<Vec<TrainingExample>> {
    let n = sub.len();
    if n < 2 {
        return Err(Error::TooShort(n));
    }
    if sub.contains(&PADDING) {
        return Err(Error::PaddingTarget);
    }
    Ok(match strategy {
        TargetStrategy::Single => vec![TrainingExample { input: sub[..n - 1].to_vec(), target: sub[n - 1] }],
        TargetStrategy::Multi => {
            (2..=n).map(|k| TrainingExample { input: sub[..k - 1].to_vec(), target: sub[k - 1] }).collect()
        }
    })
}

fn tail(items: &[ItemId], max_len: usize) -> &[ItemId] {
    &items[items.len().saturating_sub(max_len)..]
}

/// Truncates each training sequence to its last `max_len` items, splits it
/// and expands targets. Duplicate examples are kept.
pub fn build_training_set(
    split: &DatasetSplit,
    method: SplitMethod,
    strategy: TargetStrategy,
    max_len: usize,
) -> Result<TrainingSet> {
    build_from_sequences(&split.train, method, strategy, max_len)
}

/// Same as [`build_training_set`] over arbitrary (already partitioned) sequences.
pub fn build_from_sequences(
    sequences: &[UserSequence],
    method: SplitMethod,
    strategy: TargetStrategy,
    max_len: usize,
) -> Result<TrainingSet> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len must be ≥ 2, got {max_len}")));
    }
    if let SplitMethod::Sliding(t) = method {
        SplitMethod::sliding(t)?;
    }
    let mut set = TrainingSet {
        method,
        strategy,
        subsequences: Vec::new(),
        examples: Vec::new(),
        per_user_counts: Vec::new(),
        skipped: 0,
    };
    for seq in sequences {
        let items = tail(&seq.items, max_len);
        let subs = match split_sequence(items, method) {
            Ok(subs) => subs,
            Err(Error::TooShort(_)) => {
                set.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let before = set.examples.len();
        for sub in subs {
            match expand_targets(sub, strategy) {
                Ok(ex) => {
                    set.examples.extend(ex);
                    set.subsequences.push(SubSequence { user: seq.user, items: sub.to_vec() });
                }
                Err(Error::TooShort(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let produced = set.examples.len() - before;
        if produced == 0 {
            set.skipped += 1;
        } else {
            set.per_user_counts.push((seq.user, produced));
        }
    }
    Ok(set)
}

/// Python-style `seq[-(max_len + 2):-2]`.
fn legacy_slice(items: &[ItemId], max_len: usize) -> &[ItemId] {
    let n = items.len();
    let end = n.saturating_sub(2);
    let start = n.saturating_sub(max_len + 2);
    if start >= end {
        &[]
    } else {
        &items[start..end]
    }
}

/// Replica of the common "split while reading data" loop: each original
/// sequence is sliced to `[-(max_len+2) .. -2]` and every prefix of the slice
/// (including length 1) is appended. Length-1 prefixes cannot form a pair and
/// are counted in `skipped`; the rest become single-target examples.
pub fn legacy_pipeline_split(original: &[UserSequence], max_len: usize) -> Result<TrainingSet> {
    if max_len < 1 {
        return Err(Error::Config("max_len must be ≥ 1".into()));
    }
    let mut set = TrainingSet {
        method: SplitMethod::Prefix,
        strategy: TargetStrategy::Single,
        subsequences: Vec::new(),
        examples: Vec::new(),
        per_user_counts: Vec::new(),
        skipped: 0,
    };
    for seq in original {
        let input_ids = legacy_slice(&seq.items, max_len);
        let prefixes: Vec<&[ItemId]> = (0..input_ids.len()).map(|i| &input_ids[..i + 1]).collect();
        let mut produced = 0;
        for p in prefixes {
            if p.len() < 2 {
                set.skipped += 1;
                continue;
            }
            set.examples.push(TrainingExample { input: p[..p.len() - 1].to_vec(), target: p[p.len() - 1] });
            set.subsequences.push(SubSequence { user: seq.user, items: p.to_vec() });
            produced += 1;
        }
        if produced > 0 {
            set.per_user_counts.push((seq.user, produced));
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn owned(v: Vec<&[ItemId]>) -> Vec<Vec<ItemId>> {
        v.into_iter().map(<[ItemId]>::to_vec).collect()
    }

    fn ex(input: &[ItemId], target: ItemId) -> TrainingExample {
        TrainingExample { input: input.to_vec(), target }
    }

    #[test]
    fn worked_examples() {
        let s = [1, 2, 3, 4];
        assert_eq!(
            owned(split_sequence(&s, SplitMethod::Prefix).unwrap()),
            vec![vec![1, 2], vec![1, 2, 3], vec![1, 2, 3, 4]]
        );
        assert_eq!(
            owned(split_sequence(&s, SplitMethod::Suffix).unwrap()),
            vec![vec![3, 4], vec![2, 3, 4], vec![1, 2, 3, 4]]
        );
        assert_eq!(
            owned(split_sequence(&[1, 2, 3, 4, 5], SplitMethod::Sliding(3)).unwrap()),
            vec![vec![1, 2, 3], vec![2, 3, 4], vec![3, 4, 5]]
        );
    }

    #[test]
    fn minimal_and_clamped_splits() {
        assert_eq!(owned(split_sequence(&[1, 2], SplitMethod::Prefix).unwrap()), vec![vec![1, 2]]);
        assert_eq!(owned(split_sequence(&[1, 2, 3], SplitMethod::Sliding(9)).unwrap()), vec![vec![1, 2, 3]]);
        assert!(matches!(split_sequence(&[1], SplitMethod::Prefix), Err(Error::TooShort(1))));
        assert!(matches!(split_sequence(&[1], SplitMethod::Suffix), Err(Error::TooShort(1))));
        assert!(SplitMethod::sliding(1).is_err());
    }

    #[test]
    fn target_strategies() {
        assert_eq!(expand_targets(&[1, 2, 3], TargetStrategy::Single).unwrap(), vec![ex(&[1, 2], 3)]);
        assert_eq!(
            expand_targets(&[1, 2, 3], TargetStrategy::Multi).unwrap(),
            vec![ex(&[1], 2), ex(&[1, 2], 3)]
        );
        assert_eq!(
            expand_targets(&[1, 2], TargetStrategy::Multi).unwrap(),
            expand_targets(&[1, 2], TargetStrategy::Single).unwrap()
        );
        assert!(expand_targets(&[1], TargetStrategy::Single).is_err());
    }

    #[test]
    fn parses_split_names() {
        assert_eq!("prefix".parse::<SplitMethod>().unwrap(), SplitMethod::Prefix);
        assert_eq!("sliding".parse::<SplitMethod>().unwrap(), SplitMethod::Sliding(DEFAULT_WINDOW));
        assert_eq!("sliding:3".parse::<SplitMethod>().unwrap(), SplitMethod::Sliding(3));
        assert_eq!(SplitMethod::Sliding(3).to_string(), "sliding:3");
        assert!("sliding:1".parse::<SplitMethod>().is_err());
        assert!("bogus".parse::<SplitMethod>().is_err());
    }

    #[test]
    fn legacy_trace() {
        let seqs = vec![UserSequence { user: 1, items: vec![1, 2, 3, 4, 5] }];
        let ts = legacy_pipeline_split(&seqs, 50).unwrap();
        assert_eq!(ts.examples, vec![ex(&[1], 2), ex(&[1, 2], 3)]);
        assert_eq!(ts.skipped, 1);

        let short = vec![UserSequence { user: 1, items: vec![1, 2, 3] }];
        let ts = legacy_pipeline_split(&short, 50).unwrap();
        assert!(ts.examples.is_empty());
        assert_eq!(ts.skipped, 1);
    }

    #[test]
    fn legacy_slice_matches_python() {
        assert_eq!(legacy_slice(&[1, 2, 3, 4, 5, 6], 2), &[3, 4]);
        assert_eq!(legacy_slice(&[1, 2], 50), &[] as &[ItemId]);
        assert_eq!(legacy_slice(&[1], 50), &[] as &[ItemId]);
    }

    #[test]
    fn truncation_happens_before_split() {
        let seqs = vec![UserSequence { user: 1, items: vec![1, 2, 3, 4, 5] }];
        let ts = build_from_sequences(&seqs, SplitMethod::Original, TargetStrategy::Single, 3).unwrap();
        assert_eq!(ts.examples, vec![ex(&[3, 4], 5)]);
    }

    #[test]
    fn short_sequences_are_counted_not_fatal() {
        let seqs = vec![
            UserSequence { user: 1, items: vec![7] },
            UserSequence { user: 2, items: vec![1, 2] },
        ];
        let ts = build_from_sequences(&seqs, SplitMethod::Prefix, TargetStrategy::Single, 50).unwrap();
        assert_eq!(ts.skipped, 1);
        assert_eq!(ts.per_user_counts, vec![(2, 1)]);
        let ts = build_from_sequences(&seqs, SplitMethod::Original, TargetStrategy::Multi, 50).unwrap();
        assert_eq!(ts.skipped, 1);
    }
}
