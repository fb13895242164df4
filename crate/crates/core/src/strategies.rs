//! Non-personalized active-learning item rankings.
//!
//! Every heuristic scores an item from warm-user statistics only; the top-k
//! items of the resulting ranking are shown to every cold user in the same
//! order.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::{item_popularity, Dataset, FeedbackCounts};
use crate::error::{Error, Result};
use crate::seeded_rng;

/// Default add-k smoothing of the purchase/return distribution.
pub const DEFAULT_SMOOTHING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    Popularity,
    Entropy,
    Gini,
    Variance,
    Error,
    PopEnt,
    PopGini,
    PopVar,
    PopError,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 9] = [
        StrategyKind::Popularity,
        StrategyKind::Entropy,
        StrategyKind::Gini,
        StrategyKind::Variance,
        StrategyKind::Error,
        StrategyKind::PopEnt,
        StrategyKind::PopGini,
        StrategyKind::PopVar,
        StrategyKind::PopError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Popularity => "popularity",
            StrategyKind::Entropy => "entropy",
            StrategyKind::Gini => "gini",
            StrategyKind::Variance => "variance",
            StrategyKind::Error => "error",
            StrategyKind::PopEnt => "popent",
            StrategyKind::PopGini => "popgini",
            StrategyKind::PopVar => "popvar",
            StrategyKind::PopError => "poperror",
        }
    }

    /// The single heuristic mixed with log-popularity, for combined kinds.
    pub fn uncertainty_part(self) -> Option<StrategyKind> {
        match self {
            StrategyKind::PopEnt => Some(StrategyKind::Entropy),
            StrategyKind::PopGini => Some(StrategyKind::Gini),
            StrategyKind::PopVar => Some(StrategyKind::Variance),
            StrategyKind::PopError => Some(StrategyKind::Error),
            _ => None,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown strategy `{s}`")))
    }
}

/// Mixing weights of combined strategies: `w1 · ln pop(i) + w2 · s(i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { w1: 1.0, w2: 1.0 }
    }
}

/// A heuristic together with its weights (ignored by single heuristics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlStrategy {
    pub kind: StrategyKind,
    pub weights: Weights,
}

impl AlStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            weights: Weights::default(),
        }
    }

    pub fn with_weights(kind: StrategyKind, w1: f64, w2: f64) -> Self {
        Self {
            kind,
            weights: Weights { w1, w2 },
        }
    }
}

/// Per-item statistics every heuristic is computed from.
#[derive(Debug, Clone)]
pub struct ItemStats {
    counts: FeedbackCounts,
    popularity: Vec<u32>,
    smoothing: f64,
}

impl ItemStats {
    pub fn from_dataset(data: &Dataset, smoothing: f64) -> Result<Self> {
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(Error::Validation(format!("smoothing {smoothing} must be >= 0")));
        }
        Ok(Self {
            counts: FeedbackCounts::from_dataset(data),
            popularity: item_popularity(data),
            smoothing,
        })
    }

    pub fn num_items(&self) -> usize {
        self.popularity.len()
    }

    pub fn popularity(&self, item: u32) -> u32 {
        self.popularity[item as usize]
    }

    /// `(p(purchase|i), p(return|i))`.
    pub fn distribution(&self, item: u32) -> Result<(f64, f64)> {
        self.counts.distribution(item, self.smoothing)
    }

    /// Population variance of the item's observed ±1 signals; 0 when unobserved.
    pub fn variance(&self, item: u32) -> f64 {
        let pos = self.counts.purchases[item as usize] as f64;
        let neg = self.counts.returns[item as usize] as f64;
        let n = pos + neg;
        if n == 0.0 {
            return 0.0;
        }
        let mean = (pos - neg) / n;
        (pos * (1.0 - mean).powi(2) + neg * (-1.0 - mean).powi(2)) / n
    }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Binary entropy in bits.
pub fn entropy(p: (f64, f64)) -> f64 {
    -(plogp(p.0) + plogp(p.1))
}

pub fn gini(p: (f64, f64)) -> f64 {
    1.0 - (p.0 * p.0 + p.1 * p.1)
}

/// Misclassification error of the majority outcome.
pub fn majority_error(p: (f64, f64)) -> f64 {
    1.0 - p.0.max(p.1)
}

/// Score of `item` under `strategy`. Combined strategies score
/// `f64::NEG_INFINITY` for items never interacted with.
pub fn score(strategy: &AlStrategy, stats: &ItemStats, item: u32) -> Result<f64> {
    if item as usize >= stats.num_items() {
        return Err(Error::Index {
            what: "item",
            index: item as usize,
            len: stats.num_items(),
        });
    }
    let single = |kind: StrategyKind| -> Result<f64> {
        Ok(match kind {
            StrategyKind::Popularity => stats.popularity(item) as f64,
            StrategyKind::Entropy => entropy(stats.distribution(item)?),
            StrategyKind::Gini => gini(stats.distribution(item)?),
            StrategyKind::Variance => stats.variance(item),
            StrategyKind::Error => majority_error(stats.distribution(item)?),
            _ => unreachable!("combined kinds are handled below"),
        })
    };
    match strategy.kind.uncertainty_part() {
        None => single(strategy.kind),
        Some(part) => {
            let pop = stats.popularity(item);
            if pop == 0 {
                return Ok(f64::NEG_INFINITY);
            }
            let Weights { w1, w2 } = strategy.weights;
            Ok(w1 * (pop as f64).ln() + w2 * single(part)?)
        }
    }
}

/// Scores one item straight from a dataset with the default smoothing.
pub fn score_item(strategy: &AlStrategy, data: &Dataset, item: u32) -> Result<f64> {
    score(strategy, &ItemStats::from_dataset(data, DEFAULT_SMOOTHING)?, item)
}

/// Top-`k` items of `pool` by descending score, ties by lower item id.
pub fn rank_items(strategy: &AlStrategy, stats: &ItemStats, pool: &[u32], k: usize) -> Result<Vec<u32>> {
    if k > pool.len() {
        return Err(Error::Validation(format!("k = {k} exceeds pool of {}", pool.len())));
    }
    let mut scored = pool
        .iter()
        .map(|&i| Ok((score(strategy, stats, i)?, i)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

/// `k` items drawn uniformly without replacement from `pool`.
pub fn random_strategy(pool: &[u32], k: usize, seed: u64) -> Result<Vec<u32>> {
    if k > pool.len() {
        return Err(Error::Validation(format!("k = {k} exceeds pool of {}", pool.len())));
    }
    let mut rng = seeded_rng(seed, 0x4a4d);
    Ok(sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::dataset::{Interaction, Signal};
    use proptest::prelude::*;

    fn arb_data() -> impl Strategy<Value = Dataset> {
        proptest::collection::vec((0u32..10, 0u32..12, prop::bool::ANY), 1..120).prop_map(|rows| {
            let its = rows
                .into_iter()
                .map(|(u, i, s)| Interaction::new(u, i, if s { Signal::Purchase } else { Signal::Return }))
                .collect();
            Dataset::new(its, 10, 12).unwrap()
        })
    }

    proptest! {
        #[test]
        fn heuristics_bounded_and_symmetric(p in 0.0f64..=1.0) {
            let q = (p, 1.0 - p);
            let swapped = (q.1, q.0);
            prop_assert!((0.0..=1.0 + 1e-15).contains(&entropy(q)));
            prop_assert!((0.0..=0.5 + 1e-15).contains(&gini(q)));
            prop_assert!((0.0..=0.5).contains(&majority_error(q)));
            prop_assert!((entropy(q) - entropy(swapped)).abs() < 1e-15);
            prop_assert!((gini(q) - gini(swapped)).abs() < 1e-15);
            prop_assert_eq!(majority_error(q), majority_error(swapped));
        }

        #[test]
        fn rankings_are_prefix_consistent(data in arb_data(), kind_idx in 0usize..9, k in 0usize..11) {
            let stats = ItemStats::from_dataset(&data, 1.0).unwrap();
            let strat = AlStrategy::new(StrategyKind::ALL[kind_idx]);
            let pool: Vec<u32> = (0..12).collect();
            let short = rank_items(&strat, &stats, &pool, k).unwrap();
            let long = rank_items(&strat, &stats, &pool, k + 1).unwrap();
            prop_assert_eq!(&long[..k], &short[..]);
        }

        #[test]
        fn zero_uncertainty_weight_matches_popularity(data in arb_data(), kind_idx in 5usize..9, w1 in 0.1f64..5.0) {
            let stats = ItemStats::from_dataset(&data, 1.0).unwrap();
            let pool: Vec<u32> = (0..12).collect();
            let combined = AlStrategy::with_weights(StrategyKind::ALL[kind_idx], w1, 0.0);
            let pop = AlStrategy::new(StrategyKind::Popularity);
            prop_assert_eq!(
                rank_items(&combined, &stats, &pool, 12).unwrap(),
                rank_items(&pop, &stats, &pool, 12).unwrap()
            );
        }

        #[test]
        fn variance_non_negative(data in arb_data(), item in 0u32..12) {
            let stats = ItemStats::from_dataset(&data, 1.0).unwrap();
            prop_assert!(stats.variance(item) >= 0.0);
        }
    }
}
