use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Recall(usize),
    Ndcg(usize),
}

impl Metric {
    /// Recall@k then NDCG@k for each k, in the given order.
    pub fn standard(ks: &[usize]) -> Vec<Metric> {
        ks.iter()
            .flat_map(|&k| [Metric::Recall(k), Metric::Ndcg(k)])
            .collect()
    }

    pub fn k(&self) -> usize {
        match self {
            Metric::Recall(k) | Metric::Ndcg(k) => *k,
        }
    }

    pub fn compute<S: AsRef<str>>(&self, ranked: &[S], relevant: &BTreeSet<String>) -> Result<f64> {
        match *self {
            Metric::Recall(k) => recall_at_k(ranked, relevant, k),
            Metric::Ndcg(k) => ndcg_at_k(ranked, relevant, k),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Recall(k) => write!(f, "Recall@{k}"),
            Metric::Ndcg(k) => write!(f, "NDCG@{k}"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown metric {s:?}"));
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        match name {
            "Recall" => Ok(Metric::Recall(k)),
            "NDCG" => Ok(Metric::Ndcg(k)),
            _ => Err(bad()),
        }
    }
}

fn check(relevant: &BTreeSet<String>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if relevant.is_empty() {
        return Err(Error::invalid("no relevant items"));
    }
    Ok(())
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k<S: AsRef<str>>(
    ranked: &[S],
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    check(relevant, k)?;
    let hits = ranked
        .iter()
        .take(k)
        .filter(|id| relevant.contains(id.as_ref()))
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Binary-gain NDCG with discount `1 / log2(p + 1)` for 1-based position `p`.
pub fn ndcg_at_k<S: AsRef<str>>(
    ranked: &[S],
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    check(relevant, k)?;
    let discount = |p: usize| 1.0 / ((p + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(id.as_ref()))
        .fold(0.0, |acc, (i, _)| acc + discount(i + 1));
    let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    Ok(dcg / idcg)
}
