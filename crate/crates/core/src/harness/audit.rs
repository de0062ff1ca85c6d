//! Scan for held-out items leaking into model inputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::baselines::PopularityModel;
use crate::corpus::store::CorpusData;
use crate::corpus::{Interaction, UserSplit};
use crate::error::Result;
use crate::profiler::{prompt_window, render_all, PromptConfig, PromptKind, PromptTemplates};
use crate::scorer::PairIndex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub user_id: String,
    /// Which input the item was found in.
    pub source: String,
    pub item_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub users_checked: usize,
    pub prompts_checked: usize,
    /// Item mentions checked across prompts and baseline inputs.
    pub item_references_checked: usize,
    pub violations: Vec<Violation>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that no validation or test item of a user (other than items the
/// user also has in train) appears in that user's rendered prompts, in the
/// item windows the centroid and temporal-fusion baselines average, or in
/// the training positives of MF; and that popularity counts come from train
/// slices only.
pub fn leakage_audit(
    corpus: &CorpusData,
    templates: &PromptTemplates,
    prompt_config: &PromptConfig,
) -> Result<LeakageReport> {
    let mut report = LeakageReport::default();
    let index = PairIndex::from_splits(&corpus.splits, &corpus.catalog);
    let pairs = index.pair_data(&corpus.splits, 0, 0)?;
    let mut positives: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for &(u, i) in &pairs.positives {
        positives
            .entry(index.users[u].as_str())
            .or_default()
            .push(index.items[i].as_str());
    }
    for split in corpus.splits.iter() {
        let mf = positives
            .get(split.user_id.as_str())
            .cloned()
            .unwrap_or_default();
        audit_user(
            &mut report,
            split,
            &split.train,
            &mf,
            corpus,
            templates,
            prompt_config,
        )?;
    }
    let popularity = PopularityModel::from_splits(&corpus.splits)?;
    let mut recount: BTreeMap<String, u64> = BTreeMap::new();
    for split in corpus.splits.iter() {
        for e in &split.train {
            *recount.entry(e.item_id.clone()).or_default() += 1;
        }
    }
    if popularity.counts != recount {
        report.violations.push(Violation {
            user_id: String::new(),
            source: "popularity counts".into(),
            item_id: String::new(),
        });
    }
    Ok(report)
}

/// Audits the inputs built from `history` (the train slice in a real run)
/// against the user's held-out items.
fn audit_user(
    report: &mut LeakageReport,
    split: &UserSplit,
    history: &[Interaction],
    mf_positives: &[&str],
    corpus: &CorpusData,
    templates: &PromptTemplates,
    prompt_config: &PromptConfig,
) -> Result<()> {
    report.users_checked += 1;
    let train = split.train_items();
    let held_out: BTreeSet<&str> = split
        .validation
        .iter()
        .chain(&split.test)
        .map(|e| e.item_id.as_str())
        .filter(|id| !train.contains(id))
        .collect();
    let mut check = |source: &str, ids: &mut dyn Iterator<Item = &str>| {
        for id in ids {
            report.item_references_checked += 1;
            if held_out.contains(id) {
                report.violations.push(Violation {
                    user_id: split.user_id.clone(),
                    source: source.to_string(),
                    item_id: id.to_string(),
                });
            }
        }
    };
    for prompt in render_all(templates, history, &corpus.catalog, prompt_config)? {
        check(
            &format!("{} prompt", prompt.kind.as_str()),
            &mut prompt.item_ids.iter().map(String::as_str),
        );
    }
    report.prompts_checked += 3;
    check(
        "centroid input",
        &mut history.iter().map(|e| e.item_id.as_str()),
    );
    let recent = prompt_window(PromptKind::Short, history, prompt_config.n_recent);
    check(
        "recent-window input",
        &mut recent.iter().map(|e| e.item_id.as_str()),
    );
    check("mf positives", &mut mf_positives.iter().copied());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Catalog, ItemRecord, SplitDataset, SplitFractions, UserHistory};

    fn corpus() -> CorpusData {
        let items =
            (0..12).map(|i| ItemRecord::new(format!("i{i}"), format!("Title {i}"), "words"));
        let catalog = Catalog::from_items(items).unwrap();
        let mut histories = BTreeMap::new();
        for u in 0..3 {
            let events = (0..10)
                .map(|t| Interaction::new(format!("u{u}"), format!("i{}", (t + u) % 12), t as u64))
                .collect();
            histories.insert(
                format!("u{u}"),
                UserHistory::new(format!("u{u}"), events).unwrap(),
            );
        }
        let splits = SplitDataset::from_histories(&histories, SplitFractions::default()).unwrap();
        CorpusData {
            catalog,
            histories,
            splits,
        }
    }

    #[test]
    fn clean_corpus_passes() {
        let c = corpus();
        let report =
            leakage_audit(&c, &PromptTemplates::default(), &PromptConfig::default()).unwrap();
        assert!(report.is_clean(), "{:?}", report.violations);
        assert_eq!(report.users_checked, 3);
        assert_eq!(report.prompts_checked, 9);
        // Per user: 5 + 6 + 6 prompt items, 6 centroid, 5 recent, 6 MF.
        assert_eq!(report.item_references_checked, 3 * 34);
    }

    #[test]
    fn inputs_built_from_the_whole_history_are_flagged() {
        let c = corpus();
        let split = &c.splits.users["u1"];
        let history = &c.histories["u1"].events;
        let mut report = LeakageReport::default();
        let (t, p) = (PromptTemplates::default(), PromptConfig::default());
        audit_user(&mut report, split, history, &[], &c, &t, &p).unwrap();
        assert!(!report.is_clean());
        let sources: BTreeSet<&str> = report
            .violations
            .iter()
            .map(|v| v.source.as_str())
            .collect();
        for s in [
            "short prompt",
            "long prompt",
            "general prompt",
            "centroid input",
            "recent-window input",
        ] {
            assert!(sources.contains(s), "{s}");
        }
        let held_out: BTreeSet<&str> = split
            .validation
            .iter()
            .chain(&split.test)
            .map(|e| e.item_id.as_str())
            .collect();
        assert!(report
            .violations
            .iter()
            .all(|v| held_out.contains(v.item_id.as_str())));
    }
}
