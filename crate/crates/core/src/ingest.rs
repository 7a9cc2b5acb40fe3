//! Rating-log ingestion: parsing, activity filtering and the all-but-last-one split.

use std::collections::HashMap;
use std::io::BufRead;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One raw (user, item, rating, timestamp) event with external ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: u64,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, rating: f64, timestamp: u64) -> Self {
        Self {
            user: user.into(),
            item: item.into(),
            rating,
            timestamp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// `user::item::rating::timestamp`
    MovielensDat,
    /// Four columns split on a single-character delimiter, optional header.
    Delimited,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens-dat" => Ok(Format::MovielensDat),
            "delimited" => Ok(Format::Delimited),
            other => Err(Error::config(format!(
                "unknown format {other:?} (expected movielens-dat or delimited)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParsedLog {
    pub interactions: Vec<Interaction>,
    pub malformed: usize,
}

/// Parses a line-oriented rating log. Blank lines are ignored; lines that do
/// not yield a valid interaction are counted in `malformed`.
pub fn parse_interactions<R: BufRead>(source: R, format: Format, delimiter: char) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    let mut first = true;
    for line in source.lines() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            Format::MovielensDat => line.split("::").collect(),
            Format::Delimited => line.split(delimiter).collect(),
        };
        let is_first = std::mem::replace(&mut first, false);
        if is_first
            && format == Format::Delimited
            && fields[0].trim().parse::<f64>().is_err()
        {
            // header row
            continue;
        }
        match parse_fields(&fields) {
            Some(interaction) => out.interactions.push(interaction),
            None => out.malformed += 1,
        }
    }
    if out.interactions.is_empty() {
        return Err(Error::EmptyInput {
            malformed: out.malformed,
        });
    }
    Ok(out)
}

fn parse_fields(fields: &[&str]) -> Option<Interaction> {
    let [user, item, rating, timestamp] = fields else {
        return None;
    };
    let (user, item) = (user.trim(), item.trim());
    if user.is_empty() || item.is_empty() {
        return None;
    }
    let rating: f64 = rating.trim().parse().ok()?;
    if !(1.0..=5.0).contains(&rating) {
        return None;
    }
    let timestamp: u64 = timestamp.trim().parse().ok()?;
    Some(Interaction::new(user, item, rating, timestamp))
}

/// Keeps the interactions of users with at least `min_count` events. Single
/// pass over users; item activity is not considered.
pub fn filter_min_interactions(mut log: Vec<Interaction>, min_count: usize) -> Vec<Interaction> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for x in &log {
        *counts.entry(x.user.as_str()).or_default() += 1;
    }
    let keep: Vec<bool> = log.iter().map(|x| counts[x.user.as_str()] >= min_count).collect();
    let mut flags = keep.into_iter();
    log.retain(|_| flags.next().unwrap_or(false));
    log
}

/// Bijection between external ids and dense indices `0..len`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap {
    external: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    /// Assigns dense ids in iteration order; repeated ids keep their first index.
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut map = IdMap::default();
        for id in ids {
            map.intern(id.as_ref());
        }
        map
    }

    fn intern(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.index.get(id) {
            return idx;
        }
        let idx = self.external.len();
        self.external.push(id.to_owned());
        self.index.insert(id.to_owned(), idx);
        idx
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn external(&self, idx: usize) -> &str {
        &self.external[idx]
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMaps {
    pub users: IdMap,
    pub items: IdMap,
}

/// A training event with dense ids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub timestamp: u64,
}

/// A held-out interaction. `item` is `None` when the item never occurs in
/// train and so has no dense id.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldOut {
    pub user: usize,
    pub item: Option<usize>,
    pub external_item: String,
    pub rating: f64,
    pub timestamp: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Half {
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<Rating>,
    pub validation: Vec<HeldOut>,
    pub test: Vec<HeldOut>,
    pub id_maps: IdMaps,
    pub n_holdout: usize,
}

impl SplitDataset {
    pub fn n_users(&self) -> usize {
        self.id_maps.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.id_maps.items.len()
    }

    pub fn half(&self, half: Half) -> &[HeldOut] {
        match half {
            Half::Validation => &self.validation,
            Half::Test => &self.test,
        }
    }
}

/// All-but-last-one split: picks `n_holdout` users (uniformly, seeded) among
/// those with at least two interactions, removes each one's chronologically
/// last interaction and deals the removed events alternately to validation
/// and test. Timestamp ties go to the later line.
pub fn split_all_but_last(log: &[Interaction], n_holdout: usize, seed: u64) -> Result<SplitDataset> {
    let mut user_slot: HashMap<&str, usize> = HashMap::new();
    let mut per_user: Vec<Vec<usize>> = Vec::new();
    for (idx, x) in log.iter().enumerate() {
        let slot = *user_slot.entry(x.user.as_str()).or_insert_with(|| {
            per_user.push(Vec::new());
            per_user.len() - 1
        });
        per_user[slot].push(idx);
    }

    let eligible: Vec<usize> = (0..per_user.len()).filter(|&s| per_user[s].len() >= 2).collect();
    if n_holdout > eligible.len() {
        return Err(Error::config(format!(
            "n_holdout = {n_holdout} exceeds the {} users with at least two interactions",
            eligible.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, eligible.len(), n_holdout).into_vec();

    let mut held_flags = vec![false; log.len()];
    let mut held_order = Vec::with_capacity(n_holdout);
    for pos in chosen {
        let events = &per_user[eligible[pos]];
        let mut last = events[0];
        for &idx in &events[1..] {
            if log[idx].timestamp >= log[last].timestamp {
                last = idx;
            }
        }
        held_flags[last] = true;
        held_order.push(last);
    }

    let mut id_maps = IdMaps::default();
    let mut train = Vec::with_capacity(log.len() - n_holdout);
    for (x, held) in log.iter().zip(&held_flags) {
        if *held {
            continue;
        }
        train.push(Rating {
            user: id_maps.users.intern(&x.user),
            item: id_maps.items.intern(&x.item),
            rating: x.rating,
            timestamp: x.timestamp,
        });
    }

    let mut validation = Vec::with_capacity(n_holdout.div_ceil(2));
    let mut test = Vec::with_capacity(n_holdout / 2);
    for (pos, &idx) in held_order.iter().enumerate() {
        let x = &log[idx];
        let held = HeldOut {
            user: id_maps
                .users
                .get(&x.user)
                .expect("held-out user keeps at least one train interaction"),
            item: id_maps.items.get(&x.item),
            external_item: x.item.clone(),
            rating: x.rating,
            timestamp: x.timestamp,
        };
        if pos % 2 == 0 {
            validation.push(held);
        } else {
            test.push(held);
        }
    }

    Ok(SplitDataset {
        train,
        validation,
        test,
        id_maps,
        n_holdout,
    })
}

/// Sorted, de-duplicated set of dense item ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemSet(Vec<usize>);

impl ItemSet {
    pub fn contains(&self, item: usize) -> bool {
        self.0.binary_search(&item).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl FromIterator<usize> for ItemSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        let mut items: Vec<usize> = iter.into_iter().collect();
        items.sort_unstable();
        items.dedup();
        ItemSet(items)
    }
}

impl SplitDataset {
    /// Train items of every dense user.
    pub fn user_items(&self) -> Vec<ItemSet> {
        let mut lists = vec![Vec::new(); self.n_users()];
        for r in &self.train {
            lists[r.user].push(r.item);
        }
        lists.into_iter().map(ItemSet::from_iter).collect()
    }

    pub fn mean_rating(&self) -> f64 {
        if self.train.is_empty() {
            return 0.0;
        }
        self.train.iter().map(|r| r.rating).sum::<f64>() / self.train.len() as f64
    }
}
