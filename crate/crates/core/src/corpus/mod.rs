//! Interaction and item ingestion, catalog filtering, chronological user
//! histories and per-user temporal splits.

mod split;
mod stats;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{self, Loaded};

pub use split::{temporal_split, SplitDataset, SplitFractions, UserSplit};
pub use stats::{compute_ecdf, compute_stats, ecdf_from_counts, stats_from_counts, DatasetStats};

/// A single timestamped user–item event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: u64) -> Self {
        Interaction {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
            rating: None,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.user_id.is_empty() {
            return Err("empty user_id".into());
        }
        if self.item_id.is_empty() {
            return Err("empty item_id".into());
        }
        if let Some(r) = self.rating {
            if !(1.0..=5.0).contains(&r) {
                return Err(format!("rating {r} outside [1, 5]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub title: String,
    pub description: String,
}

impl ItemRecord {
    pub fn new(
        item_id: impl Into<String>,
        title: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        ItemRecord {
            item_id: item_id.into(),
            title: title.into(),
            description: description.into(),
        }
    }

    /// Text handed to the encoder for this item.
    pub fn embedding_text(&self) -> String {
        format!("{} {}", self.title, self.description)
    }
}

/// Items keyed by id, plus the users seen in the retained histories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub items: BTreeMap<String, ItemRecord>,
    pub users: BTreeSet<String>,
}

impl Catalog {
    /// Builds a catalog, rejecting duplicate item ids.
    pub fn from_items(items: impl IntoIterator<Item = ItemRecord>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for item in items {
            if item.item_id.is_empty() {
                return Err(Error::invalid("item with empty item_id"));
            }
            if map.contains_key(&item.item_id) {
                return Err(Error::invalid(format!(
                    "duplicate item_id {:?}",
                    item.item_id
                )));
            }
            map.insert(item.item_id.clone(), item);
        }
        Ok(Catalog {
            items: map,
            users: BTreeSet::new(),
        })
    }

    pub fn get(&self, item_id: &str) -> Result<&ItemRecord> {
        self.items
            .get(item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.items.contains_key(item_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Item ids in ascending order.
    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }
}

/// A user's events, ascending by `(timestamp, item_id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    pub events: Vec<Interaction>,
}

impl UserHistory {
    /// Sorts `events` into chronological order. Fails when the list is empty
    /// or contains events of another user.
    pub fn new(user_id: impl Into<String>, mut events: Vec<Interaction>) -> Result<Self> {
        let user_id = user_id.into();
        if events.is_empty() {
            return Err(Error::invalid(format!(
                "empty history for user {user_id:?}"
            )));
        }
        if let Some(e) = events.iter().find(|e| e.user_id != user_id) {
            return Err(Error::invalid(format!(
                "event of user {:?} in history of {:?}",
                e.user_id, user_id
            )));
        }
        sort_chronologically(&mut events);
        Ok(UserHistory { user_id, events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

pub(crate) fn sort_chronologically(events: &mut [Interaction]) {
    events.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
}

pub fn load_interactions(path: &Path) -> Result<Loaded<Interaction>> {
    jsonl::read_validated(path, Interaction::validate)
}

pub fn load_items(path: &Path) -> Result<Loaded<ItemRecord>> {
    jsonl::read_validated(path, |item: &ItemRecord| {
        if item.item_id.is_empty() {
            Err("empty item_id".into())
        } else {
            Ok(())
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Descriptions must be strictly longer than this many characters.
    pub min_desc_chars: usize,
    pub english_only: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_desc_chars: 500,
            english_only: true,
        }
    }
}

/// Share of ASCII letters among alphabetic characters must be at least this.
pub const ENGLISH_ASCII_RATIO: f64 = 0.9;

/// Cheap stand-in for language identification: mostly-ASCII alphabetic text
/// passes. Text with no letters at all does not.
pub fn looks_english(text: &str) -> bool {
    let (mut letters, mut ascii) = (0usize, 0usize);
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if c.is_ascii_alphabetic() {
            ascii += 1;
        }
    }
    letters > 0 && ascii as f64 >= ENGLISH_ASCII_RATIO * letters as f64
}

/// Keeps items whose description is longer than `min_desc_chars` characters
/// and, when enabled, passes [`looks_english`].
pub fn filter_catalog(catalog: &Catalog, config: &FilterConfig) -> Catalog {
    let items = catalog
        .items
        .iter()
        .filter(|(_, item)| {
            item.description.chars().count() > config.min_desc_chars
                && (!config.english_only || looks_english(&item.description))
        })
        .map(|(id, item)| (id.clone(), item.clone()))
        .collect();
    Catalog {
        items,
        users: catalog.users.clone(),
    }
}

/// Groups interactions per user, drops events on items outside the catalog
/// and drops users left with fewer than `min_history` events.
pub fn build_histories(
    interactions: &[Interaction],
    catalog: &Catalog,
    min_history: usize,
) -> BTreeMap<String, UserHistory> {
    let mut grouped: BTreeMap<&str, Vec<Interaction>> = BTreeMap::new();
    for event in interactions.iter().filter(|e| catalog.contains(&e.item_id)) {
        grouped
            .entry(event.user_id.as_str())
            .or_default()
            .push(event.clone());
    }
    grouped
        .into_iter()
        .filter(|(_, events)| !events.is_empty() && events.len() >= min_history)
        .map(|(user, mut events)| {
            sort_chronologically(&mut events);
            (
                user.to_string(),
                UserHistory {
                    user_id: user.to_string(),
                    events,
                },
            )
        })
        .collect()
}
