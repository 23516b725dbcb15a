//! Interaction-log ingestion, k-core filtering, per-user sequences and the
//! leave-one-out partition.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod synth;

/// Dense item index. `0` is the padding item and never names a real item.
pub type ItemId = u32;
/// Dense user index, starting at 1.
pub type UserId = u32;

pub const PADDING: ItemId = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: u64,
    pub item: u64,
    pub timestamp: u64,
}

impl Interaction {
    pub fn new(user: u64, item: u64, timestamp: u64) -> Self {
        Interaction { user, item, timestamp }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    /// `user<TAB>item<TAB>timestamp`
    Triplet,
    /// `user<TAB>item1,item2,...`; timestamps are synthesized per user.
    Grouped,
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "triplet" => Ok(LogFormat::Triplet),
            "grouped" => Ok(LogFormat::Grouped),
            other => Err(Error::Config(format!("unknown log format `{other}`"))),
        }
    }
}

fn parse_field(field: Option<&str>, line: usize, what: &str) -> Result<u64> {
    let raw = field.ok_or_else(|| Error::Parse { line, msg: format!("missing {what}") })?;
    raw.trim()
        .parse::<u64>()
        .map_err(|_| Error::Parse { line, msg: format!("{what} `{}` is not a non-negative integer", raw.trim()) })
}

/// Reads an interaction log. Blank lines are ignored; any other malformed
/// line fails the whole read with its 1-based line number.
pub fn parse_interactions<R: BufRead>(source: R, format: LogFormat) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    let mut next_ts: HashMap<u64, u64> = HashMap::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match format {
            LogFormat::Triplet => {
                let user = parse_field(fields.next(), lineno, "user")?;
                let item = parse_field(fields.next(), lineno, "item")?;
                let timestamp = parse_field(fields.next(), lineno, "timestamp")?;
                if fields.next().is_some() {
                    return Err(Error::Parse { line: lineno, msg: "expected 3 fields".into() });
                }
                out.push(Interaction { user, item, timestamp });
            }
            LogFormat::Grouped => {
                let user = parse_field(fields.next(), lineno, "user")?;
                let items = fields
                    .next()
                    .ok_or_else(|| Error::Parse { line: lineno, msg: "missing item list".into() })?;
                if fields.next().is_some() {
                    return Err(Error::Parse { line: lineno, msg: "expected 2 fields".into() });
                }
                let ts = next_ts.entry(user).or_insert(0);
                for raw in items.split(',') {
                    let item = parse_field(Some(raw), lineno, "item")?;
                    out.push(Interaction { user, item, timestamp: *ts });
                    *ts += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Keeps only interactions whose user and item both have at least `k`
/// interactions, iterating to a fixed point. Input order is preserved.
pub fn k_core_filter(interactions: &[Interaction], k: usize) -> Vec<Interaction> {
    let mut current: Vec<Interaction> = interactions.to_vec();
    if k <= 1 {
        return current;
    }
    loop {
        let mut user_counts: HashMap<u64, usize> = HashMap::new();
        let mut item_counts: HashMap<u64, usize> = HashMap::new();
        for it in &current {
            *user_counts.entry(it.user).or_default() += 1;
            *item_counts.entry(it.item).or_default() += 1;
        }
        let before = current.len();
        current.retain(|it| user_counts[&it.user] >= k && item_counts[&it.item] >= k);
        if current.len() == before {
            return current;
        }
    }
}

/// Dense re-indexing of the observed users and items.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    pub num_users: usize,
    pub num_items: usize,
    pub user_index: HashMap<u64, UserId>,
    pub item_index: HashMap<u64, ItemId>,
    /// `external_items[i - 1]` is the external id of dense item `i`.
    pub external_items: Vec<u64>,
    pub external_users: Vec<u64>,
}

impl Catalog {
    pub fn external_item(&self, item: ItemId) -> Option<u64> {
        (item as usize).checked_sub(1).and_then(|i| self.external_items.get(i).copied())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

/// Builds the catalog (first-seen order) and one chronological sequence per
/// user. Timestamp ties keep input order; repeated items are kept.
pub fn build_sequences(interactions: &[Interaction]) -> (Catalog, Vec<UserSequence>) {
    let mut catalog = Catalog::default();
    let mut per_user: Vec<Vec<(u64, ItemId)>> = Vec::new();
    for it in interactions {
        let next_user = catalog.user_index.len() as UserId + 1;
        let user = *catalog.user_index.entry(it.user).or_insert_with(|| {
            catalog.external_users.push(it.user);
            next_user
        });
        let next_item = catalog.item_index.len() as ItemId + 1;
        let item = *catalog.item_index.entry(it.item).or_insert_with(|| {
            catalog.external_items.push(it.item);
            next_item
        });
        if per_user.len() < user as usize {
            per_user.push(Vec::new());
        }
        per_user[user as usize - 1].push((it.timestamp, item));
    }
    catalog.num_users = catalog.user_index.len();
    catalog.num_items = catalog.item_index.len();
    let sequences = per_user
        .into_iter()
        .enumerate()
        .map(|(i, mut events)| {
            events.sort_by_key(|&(ts, _)| ts);
            UserSequence { user: i as UserId + 1, items: events.into_iter().map(|(_, v)| v).collect() }
        })
        .collect();
    (catalog, sequences)
}

/// Leave-one-out partition. `train`, `valid` and `test` are aligned: entry
/// `i` of each belongs to user `train[i].user`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<UserSequence>,
    pub valid: Vec<ItemId>,
    pub test: Vec<ItemId>,
    /// Users removed because their sequence had fewer than 3 items.
    pub dropped: usize,
    pub num_items: usize,
}

impl DatasetSplit {
    pub fn num_users(&self) -> usize {
        self.train.len()
    }

    pub fn valid_target(&self, user: UserId) -> Option<ItemId> {
        self.position(user).map(|i| self.valid[i])
    }

    pub fn test_target(&self, user: UserId) -> Option<ItemId> {
        self.position(user).map(|i| self.test[i])
    }

    fn position(&self, user: UserId) -> Option<usize> {
        self.train.binary_search_by_key(&user, |s| s.user).ok()
    }

    /// Train sequences with their validation and test items re-attached.
    pub fn original_sequences(&self) -> Vec<UserSequence> {
        self.train
            .iter()
            .zip(self.valid.iter().zip(&self.test))
            .map(|(s, (&v, &t))| {
                let mut items = s.items.clone();
                items.push(v);
                items.push(t);
                UserSequence { user: s.user, items }
            })
            .collect()
    }
}

pub fn leave_one_out(sequences: &[UserSequence], num_items: usize) -> Result<DatasetSplit> {
    let mut split = DatasetSplit { train: Vec::new(), valid: Vec::new(), test: Vec::new(), dropped: 0, num_items };
    let mut ordered: Vec<&UserSequence> = sequences.iter().collect();
    ordered.sort_by_key(|s| s.user);
    for seq in ordered {
        let n = seq.items.len();
        if n < 3 {
            split.dropped += 1;
            continue;
        }
        split.train.push(UserSequence { user: seq.user, items: seq.items[..n - 2].to_vec() });
        split.valid.push(seq.items[n - 2]);
        split.test.push(seq.items[n - 1]);
    }
    if split.train.is_empty() {
        return Err(Error::NoTrainableUsers);
    }
    Ok(split)
}

/// Dataset summary in the usual users / items / interactions / average
/// length / sparsity layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub avg_len: f64,
    pub sparsity: f64,
}

impl DatasetStats {
    pub fn from_sequences(catalog: &Catalog, sequences: &[UserSequence]) -> Self {
        let interactions: usize = sequences.iter().map(|s| s.items.len()).sum();
        let users = catalog.num_users;
        let items = catalog.num_items;
        let avg_len = if users == 0 { 0.0 } else { interactions as f64 / users as f64 };
        let cells = users as f64 * items as f64;
        let sparsity = if cells == 0.0 { 0.0 } else { 1.0 - interactions as f64 / cells };
        DatasetStats { users, items, interactions, avg_len, sparsity }
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={} items={} interactions={} avg_len={:.1} sparsity={:.2}%",
            self.users,
            self.items,
            self.interactions,
            self.avg_len,
            self.sparsity * 100.0
        )
    }
}

/// Reads a log from disk, applies `k`-core filtering and builds sequences.
pub fn load_dataset(
    path: &std::path::Path,
    format: LogFormat,
    k_core: usize,
) -> Result<(Catalog, Vec<UserSequence>)> {
    let file = std::fs::File::open(path)?;
    let raw = parse_interactions(std::io::BufReader::new(file), format)?;
    let filtered = k_core_filter(&raw, k_core);
    Ok(build_sequences(&filtered))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(v: &[(u64, u64, u64)]) -> Vec<Interaction> {
        v.iter().map(|&(u, i, t)| Interaction::new(u, i, t)).collect()
    }

    #[test]
    fn parses_triplets() {
        let got = parse_interactions("7\t3\t100\n7\t5\t200".as_bytes(), LogFormat::Triplet).unwrap();
        assert_eq!(got, ints(&[(7, 3, 100), (7, 5, 200)]));
    }

    #[test]
    fn parses_grouped_with_synthesized_timestamps() {
        let got = parse_interactions("7\t3,5".as_bytes(), LogFormat::Grouped).unwrap();
        assert_eq!(got, ints(&[(7, 3, 0), (7, 5, 1)]));
    }

    #[test]
    fn grouped_timestamps_continue_across_lines() {
        let got = parse_interactions("7\t3\n8\t4\n7\t5".as_bytes(), LogFormat::Grouped).unwrap();
        assert_eq!(got, ints(&[(7, 3, 0), (8, 4, 0), (7, 5, 1)]));
    }

    #[test]
    fn non_integer_field_reports_line() {
        match parse_interactions("7\tx\t100".as_bytes(), LogFormat::Triplet) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_interactions("1\t2\t3\n1\t2".as_bytes(), LogFormat::Triplet) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_interactions("".as_bytes(), LogFormat::Triplet).unwrap().is_empty());
    }

    #[test]
    fn one_core_is_identity() {
        let data = ints(&[(1, 1, 0), (2, 1, 0), (2, 3, 1)]);
        assert_eq!(k_core_filter(&data, 1), data);
    }

    #[test]
    fn two_core_cascades_to_empty() {
        // u1:[a,b], u2:[a]
        let data = ints(&[(1, 10, 0), (1, 11, 1), (2, 10, 0)]);
        assert!(k_core_filter(&data, 2).is_empty());
    }

    #[test]
    fn sequences_sorted_by_time() {
        let (cat, seqs) = build_sequences(&ints(&[(7, 3, 100), (7, 5, 50)]));
        let three = cat.item_index[&3];
        let five = cat.item_index[&5];
        assert_eq!(seqs[0].items, vec![five, three]);
    }

    #[test]
    fn shared_item_single_catalog_entry() {
        let (cat, seqs) = build_sequences(&ints(&[(7, 3, 100), (8, 3, 100)]));
        assert_eq!(cat.num_items, 1);
        assert_eq!(cat.num_users, 2);
        assert!(seqs.iter().all(|s| s.items.len() == 1));
    }

    #[test]
    fn ties_keep_input_order_and_duplicates() {
        let (_, seqs) = build_sequences(&ints(&[(1, 9, 5), (1, 8, 5), (1, 9, 5)]));
        assert_eq!(seqs[0].items, vec![1, 2, 1]);
    }

    #[test]
    fn leave_one_out_basic() {
        let seqs = vec![
            UserSequence { user: 1, items: vec![1, 2, 3, 4] },
            UserSequence { user: 2, items: vec![1, 2] },
        ];
        let split = leave_one_out(&seqs, 4).unwrap();
        assert_eq!(split.train, vec![UserSequence { user: 1, items: vec![1, 2] }]);
        assert_eq!(split.valid, vec![3]);
        assert_eq!(split.test, vec![4]);
        assert_eq!(split.dropped, 1);
        assert_eq!(split.valid_target(1), Some(3));
        assert_eq!(split.test_target(2), None);
    }

    #[test]
    fn leave_one_out_all_dropped_is_error() {
        let seqs = vec![UserSequence { user: 1, items: vec![1, 2] }];
        assert!(matches!(leave_one_out(&seqs, 2), Err(Error::NoTrainableUsers)));
    }

    #[test]
    fn stats_follow_column_definitions() {
        let (cat, seqs) = build_sequences(&ints(&[(1, 1, 0), (1, 2, 1), (2, 1, 0), (2, 1, 1)]));
        let st = DatasetStats::from_sequences(&cat, &seqs);
        assert_eq!((st.users, st.items, st.interactions), (2, 2, 4));
        assert_eq!(st.avg_len, 2.0);
        assert_eq!(st.sparsity, 0.0);
    }
}
