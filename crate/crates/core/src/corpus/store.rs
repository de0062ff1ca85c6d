//! The prepared data directory shared by every pipeline stage.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    build_histories, filter_catalog, load_interactions, load_items, Catalog, FilterConfig,
    SplitDataset, SplitFractions, UserHistory, UserSplit,
};
use crate::error::{Error, Result};
use crate::jsonl;

pub const ITEMS_FILE: &str = "items.jsonl";
pub const HISTORIES_FILE: &str = "histories.jsonl";
pub const SPLITS_FILE: &str = "splits.jsonl";
pub const INGEST_META_FILE: &str = "ingest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub filter: FilterConfig,
    pub min_history: usize,
    pub fractions: SplitFractions,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            filter: FilterConfig::default(),
            min_history: 5,
            fractions: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMeta {
    pub config: IngestConfig,
    pub interactions_read: usize,
    pub malformed_interactions: usize,
    pub items_read: usize,
    pub malformed_items: usize,
    pub items_retained: usize,
    pub users_retained: usize,
}

/// Filtered catalog, chronological histories and their splits.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusData {
    pub catalog: Catalog,
    pub histories: BTreeMap<String, UserHistory>,
    pub splits: SplitDataset,
}

/// Reads the raw interaction and item files and prepares the corpus.
/// Malformed lines are logged and tallied in the returned metadata.
pub fn ingest(
    interactions: &Path,
    items: &Path,
    config: &IngestConfig,
) -> Result<(CorpusData, IngestMeta)> {
    if config.min_history < 3 {
        return Err(Error::Config(format!(
            "min_history {} cannot yield three nonempty slices",
            config.min_history
        )));
    }
    let loaded_events = load_interactions(interactions)?;
    let loaded_items = load_items(items)?;
    for m in loaded_events
        .malformed
        .iter()
        .chain(&loaded_items.malformed)
    {
        log::warn!("skipping malformed line {}: {}", m.line, m.message);
    }
    let raw = Catalog::from_items(loaded_items.records.iter().cloned())?;
    let mut catalog = filter_catalog(&raw, &config.filter);
    let histories = build_histories(&loaded_events.records, &catalog, config.min_history);
    catalog.users = histories.keys().cloned().collect();
    let splits = SplitDataset::from_histories(&histories, config.fractions)?;
    let meta = IngestMeta {
        config: *config,
        interactions_read: loaded_events.records.len(),
        malformed_interactions: loaded_events.malformed_count(),
        items_read: loaded_items.records.len(),
        malformed_items: loaded_items.malformed_count(),
        items_retained: catalog.len(),
        users_retained: histories.len(),
    };
    Ok((
        CorpusData {
            catalog,
            histories,
            splits,
        },
        meta,
    ))
}

pub fn write_data_dir(dir: &Path, data: &CorpusData, meta: &IngestMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    jsonl::write(&dir.join(ITEMS_FILE), data.catalog.items.values())?;
    jsonl::write(&dir.join(HISTORIES_FILE), data.histories.values())?;
    jsonl::write(&dir.join(SPLITS_FILE), data.splits.users.values())?;
    jsonl::write_json(&dir.join(INGEST_META_FILE), meta)
}

pub fn read_data_dir(dir: &Path) -> Result<CorpusData> {
    let items = jsonl::read(&dir.join(ITEMS_FILE))?.into_strict()?;
    let mut catalog = Catalog::from_items(items)?;
    let histories: Vec<UserHistory> = jsonl::read(&dir.join(HISTORIES_FILE))?.into_strict()?;
    let splits: Vec<UserSplit> = jsonl::read(&dir.join(SPLITS_FILE))?.into_strict()?;
    let histories: BTreeMap<_, _> = histories
        .into_iter()
        .map(|h| (h.user_id.clone(), h))
        .collect();
    catalog.users = histories.keys().cloned().collect();
    let splits = SplitDataset {
        users: splits.into_iter().map(|s| (s.user_id.clone(), s)).collect(),
    };
    Ok(CorpusData {
        catalog,
        histories,
        splits,
    })
}

pub fn read_ingest_meta(dir: &Path) -> Result<IngestMeta> {
    jsonl::read_json(&dir.join(INGEST_META_FILE))
}
