//! Full-catalog top-K ranking evaluation, significance testing and reports.

mod metrics;
mod report;
mod significance;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, SplitDataset};
use crate::error::{Error, Result};

pub use metrics::{ndcg_at_k, recall_at_k, Metric};
pub use report::{
    ablation_gains, parse_report_csv, AblationGains, ComparisonReport, ReportRow,
    SIGNIFICANCE_LEVEL,
};
pub use significance::{paired_significance, paired_t_statistic, relative_gain};

pub const DEFAULT_KS: [usize; 2] = [10, 20];

/// One user's ranking problem: every catalog item outside the user's train
/// and validation slices is a candidate; the test items are relevant.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTask {
    pub user_id: String,
    pub candidates: Vec<String>,
    pub relevant: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskSet {
    pub tasks: Vec<RankingTask>,
    /// Users whose test items were all seen earlier (or absent from the
    /// catalog) and who therefore cannot be evaluated.
    pub skipped: Vec<String>,
}

pub fn ranking_tasks(splits: &SplitDataset, catalog: &Catalog) -> TaskSet {
    let mut out = TaskSet::default();
    for split in splits.iter() {
        let seen = split.seen_items();
        let candidates: Vec<String> = catalog
            .item_ids()
            .filter(|id| !seen.contains(id))
            .map(str::to_string)
            .collect();
        let relevant: BTreeSet<String> = split
            .test
            .iter()
            .map(|e| e.item_id.as_str())
            .filter(|id| !seen.contains(id) && catalog.contains(id))
            .map(str::to_string)
            .collect();
        if relevant.is_empty() {
            out.skipped.push(split.user_id.clone());
        } else {
            out.tasks.push(RankingTask {
                user_id: split.user_id.clone(),
                candidates,
                relevant,
            });
        }
    }
    if !out.skipped.is_empty() {
        log::warn!(
            "{} users have no rankable test items and are skipped",
            out.skipped.len()
        );
    }
    out
}

/// Anything that can score a user's candidate items; higher is better.
pub trait ItemScorer: Sync {
    fn score_items(&self, user_id: &str, items: &[String]) -> Result<Vec<f64>>;
}

/// Orders `items` by score descending, breaking ties by id ascending.
pub fn rank_by_scores(items: &[String], scores: &[f64]) -> Result<Vec<String>> {
    if items.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: items.len(),
            actual: scores.len(),
        });
    }
    if let Some(bad) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::invalid(format!("NaN score for item {}", items[bad])));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| items[a].cmp(&items[b]))
    });
    Ok(order.into_iter().map(|i| items[i].clone()).collect())
}

pub fn rank_candidates<S: ItemScorer + ?Sized>(
    scorer: &S,
    task: &RankingTask,
) -> Result<Vec<String>> {
    let scores = scorer.score_items(&task.user_id, &task.candidates)?;
    rank_by_scores(&task.candidates, &scores)
}

/// Per-user metric values (one row per evaluated user, columns in `metrics`
/// order) and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metrics: Vec<Metric>,
    pub per_user: BTreeMap<String, Vec<f64>>,
    pub means: Vec<f64>,
    pub skipped: usize,
}

impl MetricResult {
    pub fn from_per_user(
        metrics: Vec<Metric>,
        per_user: BTreeMap<String, Vec<f64>>,
        skipped: usize,
    ) -> Result<Self> {
        if per_user.is_empty() {
            return Err(Error::invalid("no users were evaluated"));
        }
        let n = per_user.len() as f64;
        let means = (0..metrics.len())
            .map(|m| per_user.values().map(|row| row[m]).sum::<f64>() / n)
            .collect();
        Ok(MetricResult {
            metrics,
            per_user,
            means,
            skipped,
        })
    }

    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.metrics
            .iter()
            .position(|m| *m == metric)
            .map(|i| self.means[i])
    }

    /// The per-user column for `metric`, ordered by user id.
    pub fn column(&self, metric: Metric) -> Option<Vec<f64>> {
        let i = self.metrics.iter().position(|m| *m == metric)?;
        Some(self.per_user.values().map(|row| row[i]).collect())
    }
}

/// Ranks every task's candidates (in parallel) and scores them.
pub fn evaluate<S: ItemScorer + ?Sized>(
    scorer: &S,
    tasks: &TaskSet,
    ks: &[usize],
) -> Result<MetricResult> {
    let metrics = Metric::standard(ks);
    let rows: Vec<(String, Vec<f64>)> = tasks
        .tasks
        .par_iter()
        .map(|task| {
            let ranked = rank_candidates(scorer, task)?;
            let values = metrics
                .iter()
                .map(|m| m.compute(&ranked, &task.relevant))
                .collect::<Result<Vec<f64>>>()?;
            Ok((task.user_id.clone(), values))
        })
        .collect::<Result<_>>()?;
    MetricResult::from_per_user(metrics, rows.into_iter().collect(), tasks.skipped.len())
}
