use std::collections::{BTreeSet, HashMap};

use super::train::PairData;
use crate::corpus::{Catalog, SplitDataset};
use crate::error::{Error, Result};

/// Dense indices for the users of a split dataset and the items of a catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIndex {
    pub users: Vec<String>,
    pub items: Vec<String>,
    user_pos: HashMap<String, usize>,
    item_pos: HashMap<String, usize>,
}

impl PairIndex {
    pub fn new(users: Vec<String>, items: Vec<String>) -> Self {
        let user_pos = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        let item_pos = items
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        PairIndex {
            users,
            items,
            user_pos,
            item_pos,
        }
    }

    /// Users in split order, items in catalog order.
    pub fn from_splits(splits: &SplitDataset, catalog: &Catalog) -> Self {
        Self::new(
            splits.users.keys().cloned().collect(),
            catalog.item_ids().map(str::to_string).collect(),
        )
    }

    pub fn user(&self, id: &str) -> Result<usize> {
        self.user_pos
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown user {id}")))
    }

    pub fn item(&self, id: &str) -> Result<usize> {
        self.item_pos
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    /// Train positives, per-user train exclusions, and validation pairs
    /// (positives plus seeded negatives) for [`fit`](super::fit).
    pub fn pair_data(
        &self,
        splits: &SplitDataset,
        negatives_per_positive: usize,
        seed: u64,
    ) -> Result<PairData> {
        let mut positives = Vec::new();
        let mut val = Vec::new();
        let mut train_items = vec![BTreeSet::new(); self.users.len()];
        for split in splits.iter() {
            let u = self.user(&split.user_id)?;
            for ev in &split.train {
                let i = self.item(&ev.item_id)?;
                positives.push((u, i));
                train_items[u].insert(i);
            }
            for ev in &split.validation {
                val.push((u, self.item(&ev.item_id)?));
            }
        }
        Ok(PairData::new(
            self.items.len(),
            positives,
            train_items,
            &val,
            negatives_per_positive,
            seed,
        ))
    }
}
