//! Implicit-feedback interaction data: loading, synthetic generation,
//! cold/warm splitting and per-item summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeded_rng;

/// Observed reaction of a user to an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signal {
    Return,
    Absent,
    Purchase,
}

impl Signal {
    pub fn value(self) -> f64 {
        match self {
            Signal::Return => -1.0,
            Signal::Absent => 0.0,
            Signal::Purchase => 1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Signal::Return => -1,
            Signal::Absent => 0,
            Signal::Purchase => 1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Signal> {
        match v {
            -1 => Some(Signal::Return),
            0 => Some(Signal::Absent),
            1 => Some(Signal::Purchase),
            _ => None,
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_i8())
    }
}

/// One `(user, item, signal)` record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub signal: Signal,
}

impl Interaction {
    pub fn new(user: u32, item: u32, signal: Signal) -> Self {
        Self { user, item, signal }
    }
}

/// Sparse interaction matrix. Absent pairs mean [`Signal::Absent`]; stored
/// signals are always purchases or returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    interactions: Vec<Interaction>,
    num_users: usize,
    num_items: usize,
    user_labels: Vec<u64>,
    item_labels: Vec<u64>,
}

impl Dataset {
    /// Builds a dataset over the id space `0..num_users` × `0..num_items`.
    ///
    /// Duplicate `(user, item)` pairs keep the last occurrence; the stored
    /// interactions are sorted by `(user, item)`.
    pub fn new(interactions: Vec<Interaction>, num_users: usize, num_items: usize) -> Result<Self> {
        let mut dedup = BTreeMap::new();
        for it in interactions {
            if it.user as usize >= num_users {
                return Err(Error::Index {
                    what: "user",
                    index: it.user as usize,
                    len: num_users,
                });
            }
            if it.item as usize >= num_items {
                return Err(Error::Index {
                    what: "item",
                    index: it.item as usize,
                    len: num_items,
                });
            }
            if it.signal == Signal::Absent {
                return Err(Error::Validation(format!(
                    "stored signal for ({}, {}) must be +1 or -1",
                    it.user, it.item
                )));
            }
            dedup.insert((it.user, it.item), it.signal);
        }
        let interactions = dedup
            .into_iter()
            .map(|((user, item), signal)| Interaction { user, item, signal })
            .collect();
        Ok(Self {
            interactions,
            num_users,
            num_items,
            user_labels: (0..num_users as u64).collect(),
            item_labels: (0..num_items as u64).collect(),
        })
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Original identifier of a re-indexed user.
    pub fn user_label(&self, user: u32) -> u64 {
        self.user_labels[user as usize]
    }

    /// Original identifier of a re-indexed item.
    pub fn item_label(&self, item: u32) -> u64 {
        self.item_labels[item as usize]
    }

    /// Interactions grouped by user, in item order.
    pub fn by_user(&self) -> Vec<Vec<(u32, Signal)>> {
        let mut out = vec![Vec::new(); self.num_users];
        for it in &self.interactions {
            out[it.user as usize].push((it.item, it.signal));
        }
        out
    }

    /// Keeps only the interactions of users for which `keep` is true. The id
    /// space is unchanged.
    pub fn retain_users(&self, keep: &[bool]) -> Dataset {
        Dataset {
            interactions: self
                .interactions
                .iter()
                .filter(|it| keep[it.user as usize])
                .copied()
                .collect(),
            num_users: self.num_users,
            num_items: self.num_items,
            user_labels: self.user_labels.clone(),
            item_labels: self.item_labels.clone(),
        }
    }

    /// Writes the canonical `user_id,item_id,signal` CSV using the original labels.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let res: std::io::Result<()> = (|| {
            writeln!(w, "user_id,item_id,signal")?;
            for it in &self.interactions {
                writeln!(
                    w,
                    "{},{},{}",
                    self.user_label(it.user),
                    self.item_label(it.item),
                    it.signal
                )?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

/// Reads a `user_id,item_id,signal` CSV (optional header, LF or CRLF).
///
/// User and item ids are re-indexed contiguously in ascending order of the
/// raw identifiers; the raw values stay available through
/// [`Dataset::user_label`] and [`Dataset::item_label`].
pub fn load_interactions(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                line: 0,
                message: format!("{other:?}"),
            },
        })?;

    let mut raw = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
        if idx == 0 && record.get(0) == Some("user_id") {
            continue;
        }
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let field = |i: usize, name: &str| -> Result<i64> {
            record[i].parse::<i64>().map_err(|e| Error::Parse {
                line,
                message: format!("{name} `{}`: {e}", &record[i]),
            })
        };
        let user = field(0, "user_id")?;
        let item = field(1, "item_id")?;
        let signal = field(2, "signal")?;
        if user < 0 || item < 0 {
            return Err(Error::Parse {
                line,
                message: "identifiers must be non-negative".into(),
            });
        }
        let signal = match Signal::from_i64(signal) {
            Some(s @ (Signal::Purchase | Signal::Return)) => s,
            _ => {
                return Err(Error::Validation(format!(
                    "line {line}: signal {signal} is not +1 or -1"
                )))
            }
        };
        raw.push((user as u64, item as u64, signal));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let users: Vec<u64> = raw.iter().map(|r| r.0).collect::<BTreeSet<_>>().into_iter().collect();
    let items: Vec<u64> = raw.iter().map(|r| r.1).collect::<BTreeSet<_>>().into_iter().collect();
    let index = |ids: &[u64], v: u64| ids.binary_search(&v).expect("id collected above") as u32;
    let interactions = raw
        .iter()
        .map(|&(u, i, s)| Interaction::new(index(&users, u), index(&items, i), s))
        .collect();
    let mut data = Dataset::new(interactions, users.len(), items.len())?;
    data.user_labels = users;
    data.item_labels = items;
    Ok(data)
}

/// A cold user together with the interactions hidden from training.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdUser {
    pub user: u32,
    pub hidden: Vec<(u32, Signal)>,
}

/// Outcome of [`split_cold_warm`].
#[derive(Debug, Clone)]
pub struct SplitResult {
    /// Interactions of warm users only, over the original id space.
    pub warm: Dataset,
    pub warm_users: Vec<u32>,
    /// Users drawn as cold before excluding those without interactions.
    pub cold_candidates: Vec<u32>,
    /// Retained cold users; each has at least one hidden interaction.
    pub cold_users: Vec<ColdUser>,
    pub seed: u64,
}

/// Number of cold users drawn from `num_users`: round-half-up, at least one,
/// and leaving at least one warm user.
pub fn cold_count(num_users: usize, cold_fraction: f64) -> usize {
    let n = (cold_fraction * num_users as f64 + 0.5).floor() as usize;
    n.clamp(1, num_users.saturating_sub(1).max(1))
}

/// Randomly hides all interactions of a `cold_fraction` share of users.
pub fn split_cold_warm(data: &Dataset, cold_fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(cold_fraction > 0.0 && cold_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "cold fraction {cold_fraction} must lie strictly between 0 and 1"
        )));
    }
    if data.num_users() < 2 || data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = seeded_rng(seed, 0x5917);
    let mut users: Vec<u32> = (0..data.num_users() as u32).collect();
    users.shuffle(&mut rng);
    let n_cold = cold_count(data.num_users(), cold_fraction);

    let mut cold_candidates = users[..n_cold].to_vec();
    cold_candidates.sort_unstable();
    let mut warm_users = users[n_cold..].to_vec();
    warm_users.sort_unstable();

    let mut is_warm = vec![false; data.num_users()];
    for &u in &warm_users {
        is_warm[u as usize] = true;
    }
    let per_user = data.by_user();
    let cold_users = cold_candidates
        .iter()
        .filter(|&&u| !per_user[u as usize].is_empty())
        .map(|&u| ColdUser {
            user: u,
            hidden: per_user[u as usize].clone(),
        })
        .collect();

    Ok(SplitResult {
        warm: data.retain_users(&is_warm),
        warm_users,
        cold_candidates,
        cold_users,
        seed,
    })
}

/// Parameters of the planted-cluster synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_clusters: usize,
    pub interactions_per_user: usize,
    /// Probability that an item is drawn uniformly from the whole catalogue
    /// instead of the user's cluster block.
    pub noise_rate: f64,
    /// Probability that an interaction is a return rather than a purchase.
    pub return_rate: f64,
    /// Zipf exponent of item choice inside a cluster block; 0 is uniform.
    pub popularity_skew: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 500,
            num_clusters: 4,
            interactions_per_user: 20,
            noise_rate: 0.1,
            return_rate: 0.1,
            popularity_skew: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.num_users == 0 || self.num_items == 0 || self.num_clusters == 0 || self.interactions_per_user == 0 {
            return bad("synthetic counts must be >= 1".into());
        }
        if self.num_clusters > self.num_items {
            return bad(format!(
                "{} clusters cannot partition {} items",
                self.num_clusters, self.num_items
            ));
        }
        let min_block = self.num_items / self.num_clusters;
        if self.interactions_per_user > min_block {
            return bad(format!(
                "interactions_per_user {} exceeds the smallest cluster block ({min_block} items)",
                self.interactions_per_user
            ));
        }
        for (name, p) in [("noise_rate", self.noise_rate), ("return_rate", self.return_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} must lie in [0, 1]"));
            }
        }
        if !(self.popularity_skew.is_finite() && self.popularity_skew >= 0.0) {
            return bad(format!("popularity_skew {} must be finite and >= 0", self.popularity_skew));
        }
        Ok(())
    }

    /// Item range `[start, end)` owned by `cluster`.
    pub fn cluster_block(&self, cluster: usize) -> std::ops::Range<usize> {
        let start = cluster * self.num_items / self.num_clusters;
        let end = (cluster + 1) * self.num_items / self.num_clusters;
        start..end
    }

    /// Cluster of `user` (round-robin assignment).
    pub fn cluster_of(&self, user: usize) -> usize {
        user % self.num_clusters
    }
}

/// Generates a planted-cluster dataset.
///
/// Users are assigned to clusters round-robin. Each user picks
/// `interactions_per_user` distinct items: with probability `1 - noise_rate`
/// from their cluster's contiguous item block (Zipf-weighted by position in
/// the block), otherwise uniformly over all items.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = seeded_rng(seed, 0x5e_17);
    let blocks: Vec<(std::ops::Range<usize>, WeightedIndex<f64>)> = (0..cfg.num_clusters)
        .map(|c| {
            let block = cfg.cluster_block(c);
            let weights = (0..block.len()).map(|r| ((r + 1) as f64).powf(-cfg.popularity_skew));
            let dist = WeightedIndex::new(weights).expect("non-empty block with positive weights");
            (block, dist)
        })
        .collect();

    let mut interactions = Vec::with_capacity(cfg.num_users * cfg.interactions_per_user);
    let mut chosen = vec![false; cfg.num_items];
    for user in 0..cfg.num_users {
        let (block, dist) = &blocks[cfg.cluster_of(user)];
        let mut picked = Vec::with_capacity(cfg.interactions_per_user);
        let mut misses = 0usize;
        while picked.len() < cfg.interactions_per_user {
            let item = if rng.gen_bool(cfg.noise_rate) {
                rng.gen_range(0..cfg.num_items)
            } else {
                block.start + dist.sample(&mut rng)
            };
            if chosen[item] {
                misses += 1;
                if misses > 1000 {
                    // heavy skew: fall back to the first unused block item
                    let item = block.clone().find(|&i| !chosen[i]).expect("block larger than request");
                    chosen[item] = true;
                    picked.push(item);
                    misses = 0;
                }
                continue;
            }
            chosen[item] = true;
            picked.push(item);
            misses = 0;
        }
        for &item in &picked {
            chosen[item] = false;
            let signal = if rng.gen_bool(cfg.return_rate) {
                Signal::Return
            } else {
                Signal::Purchase
            };
            interactions.push(Interaction::new(user as u32, item as u32, signal));
        }
    }
    Dataset::new(interactions, cfg.num_users, cfg.num_items)
}

/// Number of interactions (either signal) per item.
pub fn item_popularity(data: &Dataset) -> Vec<u32> {
    let mut counts = vec![0u32; data.num_items()];
    for it in data.interactions() {
        counts[it.item as usize] += 1;
    }
    counts
}

/// All item ids ordered by descending popularity, ties by lower id.
pub fn popularity_ranking(data: &Dataset) -> Vec<u32> {
    let counts = item_popularity(data);
    let mut items: Vec<u32> = (0..data.num_items() as u32).collect();
    items.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    items
}

/// Purchase and return counts for every item.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackCounts {
    pub purchases: Vec<u32>,
    pub returns: Vec<u32>,
}

impl FeedbackCounts {
    pub fn from_dataset(data: &Dataset) -> Self {
        let mut purchases = vec![0u32; data.num_items()];
        let mut returns = vec![0u32; data.num_items()];
        for it in data.interactions() {
            match it.signal {
                Signal::Purchase => purchases[it.item as usize] += 1,
                Signal::Return => returns[it.item as usize] += 1,
                Signal::Absent => {}
            }
        }
        Self { purchases, returns }
    }

    pub fn num_items(&self) -> usize {
        self.purchases.len()
    }

    pub fn total(&self, item: u32) -> u32 {
        self.purchases[item as usize] + self.returns[item as usize]
    }

    /// `(p_purchase, p_return)` with add-`smoothing` smoothing.
    pub fn distribution(&self, item: u32, smoothing: f64) -> Result<(f64, f64)> {
        if item as usize >= self.num_items() {
            return Err(Error::Index {
                what: "item",
                index: item as usize,
                len: self.num_items(),
            });
        }
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(Error::Validation(format!("smoothing {smoothing} must be >= 0")));
        }
        let pos = self.purchases[item as usize] as f64;
        let neg = self.returns[item as usize] as f64;
        let denom = pos + neg + 2.0 * smoothing;
        if denom == 0.0 {
            return Err(Error::UndefinedDistribution { item });
        }
        let p_pos = (pos + smoothing) / denom;
        Ok((p_pos, 1.0 - p_pos))
    }
}

/// Empirical purchase/return distribution of one item.
pub fn feedback_distribution(data: &Dataset, item: u32, smoothing: f64) -> Result<(f64, f64)> {
    FeedbackCounts::from_dataset(data).distribution(item, smoothing)
}
