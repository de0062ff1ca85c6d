use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Interaction, UserHistory};
use crate::error::{Error, Result};

/// Train and validation shares of each user's history; the test slice takes
/// whatever remains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            validation: 0.2,
        }
    }
}

/// One user's chronological train / validation / test slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user_id: String,
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

impl UserSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn train_items(&self) -> BTreeSet<&str> {
        self.train.iter().map(|e| e.item_id.as_str()).collect()
    }

    /// Items the user has seen before the test period.
    pub fn seen_items(&self) -> BTreeSet<&str> {
        self.train
            .iter()
            .chain(&self.validation)
            .map(|e| e.item_id.as_str())
            .collect()
    }
}

// Guards `floor` against products such as 0.6 * 5 landing a hair under 3.
const FLOOR_SLACK: f64 = 1e-9;

fn floor_share(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + FLOOR_SLACK).floor() as usize
}

/// Splits a history into contiguous chronological slices:
/// train = max(1, ⌊train·n⌋), validation = max(1, ⌊validation·n⌋), test = rest.
pub fn temporal_split(history: &UserHistory, fractions: SplitFractions) -> Result<UserSplit> {
    let n = history.events.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "user {:?} has {n} events; a temporal split needs at least 3",
            history.user_id
        )));
    }
    if !(fractions.train > 0.0 && fractions.validation > 0.0)
        || fractions.train + fractions.validation >= 1.0
    {
        return Err(Error::invalid(format!("bad split fractions {fractions:?}")));
    }
    let train = floor_share(fractions.train, n).max(1);
    let validation = floor_share(fractions.validation, n).max(1);
    if train + validation >= n {
        return Err(Error::invalid(format!(
            "split {train}/{validation} of {n} events leaves no test slice"
        )));
    }
    let events = &history.events;
    Ok(UserSplit {
        user_id: history.user_id.clone(),
        train: events[..train].to_vec(),
        validation: events[train..train + validation].to_vec(),
        test: events[train + validation..].to_vec(),
    })
}

/// Per-user splits for a whole corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitDataset {
    pub users: BTreeMap<String, UserSplit>,
}

impl SplitDataset {
    pub fn from_histories(
        histories: &BTreeMap<String, UserHistory>,
        fractions: SplitFractions,
    ) -> Result<Self> {
        let users = histories
            .iter()
            .map(|(id, h)| Ok((id.clone(), temporal_split(h, fractions)?)))
            .collect::<Result<_>>()?;
        Ok(SplitDataset { users })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserSplit> {
        self.users.values()
    }
}
