use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::UserHistory;
use crate::error::{Error, Result};

/// Corpus size and the distribution of per-user interaction counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub user_count: usize,
    pub item_count: usize,
    pub interaction_count: usize,
    pub mean: f64,
    pub median: f64,
    pub mode: usize,
    /// Population standard deviation.
    pub std_dev: f64,
}

/// Summary statistics of a list of per-user counts. Item and interaction
/// totals are left for the caller.
pub fn stats_from_counts(counts: &[usize]) -> Result<DatasetStats> {
    if counts.is_empty() {
        return Err(Error::invalid("statistics of an empty corpus"));
    }
    let n = counts.len() as u128;
    let sum: u128 = counts.iter().map(|&c| c as u128).sum();
    let sum_sq: u128 = counts.iter().map(|&c| (c as u128) * (c as u128)).sum();

    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] as f64 + sorted[mid] as f64) / 2.0
    };

    // Runs in a sorted list; strict `>` keeps the smallest value on ties.
    let mut mode = sorted[0];
    let mut best_run = 0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&c| c == sorted[i]).count();
        if j > best_run {
            best_run = j;
            mode = sorted[i];
        }
        i += j;
    }

    // Population variance as an exact integer ratio before the one rounding.
    let variance = (n * sum_sq - sum * sum) as f64 / (n * n) as f64;
    Ok(DatasetStats {
        user_count: counts.len(),
        item_count: 0,
        interaction_count: sum as usize,
        mean: sum as f64 / n as f64,
        median,
        mode,
        std_dev: variance.sqrt(),
    })
}

pub fn compute_stats(histories: &BTreeMap<String, UserHistory>) -> Result<DatasetStats> {
    let counts: Vec<usize> = histories.values().map(UserHistory::len).collect();
    let mut stats = stats_from_counts(&counts)?;
    stats.item_count = histories
        .values()
        .flat_map(|h| h.events.iter().map(|e| e.item_id.as_str()))
        .collect::<BTreeSet<_>>()
        .len();
    Ok(stats)
}

/// `(count, fraction of users with at most that many interactions)`, one
/// point per distinct count.
pub fn ecdf_from_counts(counts: &[usize]) -> Result<Vec<(usize, f64)>> {
    if counts.is_empty() {
        return Err(Error::invalid("ECDF of an empty corpus"));
    }
    let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in counts {
        *tally.entry(c).or_default() += 1;
    }
    let n = counts.len() as f64;
    let mut seen = 0usize;
    Ok(tally
        .into_iter()
        .map(|(count, k)| {
            seen += k;
            (count, seen as f64 / n)
        })
        .collect())
}

pub fn compute_ecdf(histories: &BTreeMap<String, UserHistory>) -> Result<Vec<(usize, f64)>> {
    let counts: Vec<usize> = histories.values().map(UserHistory::len).collect();
    ecdf_from_counts(&counts)
}
