//! Seeded synthetic corpus with a planted preference shift.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Interaction, ItemRecord};
use crate::error::{Error, Result};
use crate::jsonl;

pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const USER_LABELS_FILE: &str = "labels.jsonl";
pub const ITEM_TOPICS_FILE: &str = "item_topics.jsonl";

const WORDS_PER_TOPIC: usize = 16;
const MIN_HISTORY: usize = 25;
const MAX_HISTORY: usize = 40;
/// Share of a shifted user's history that precedes the switch.
const EARLY_SHARE: f64 = 0.4;
const DESCRIPTION_CHARS: usize = 640;
const BASE_TIME: u64 = 1_600_000_000;

const FILLER: [&str; 16] = [
    "the", "and", "of", "a", "to", "in", "for", "is", "on", "an", "as", "at", "by", "its", "one",
    "new",
];
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub n_topics: usize,
    pub shift_fraction: f64,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.n_topics == 0 {
            return Err(Error::Config(
                "users, items and topics must be positive".into(),
            ));
        }
        if self.n_items < self.n_topics {
            return Err(Error::Config(format!(
                "{} items cannot cover {} topics",
                self.n_items, self.n_topics
            )));
        }
        if !(0.0..=1.0).contains(&self.shift_fraction) {
            return Err(Error::Config(format!(
                "shift fraction {} is outside [0, 1]",
                self.shift_fraction
            )));
        }
        Ok(())
    }
}

/// Ground truth for one generated user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLabel {
    pub user_id: String,
    pub long_topic: usize,
    pub recent_topic: usize,
    pub shifted: bool,
    /// Index of the first event drawn from the recent topic.
    pub switch_index: usize,
    pub history_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTopic {
    pub item_id: String,
    pub topic: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub items: Vec<ItemRecord>,
    pub item_topics: Vec<ItemTopic>,
    pub interactions: Vec<Interaction>,
    pub labels: Vec<UserLabel>,
    /// Topic vocabularies, one word list per topic.
    pub vocabulary: Vec<Vec<String>>,
}

impl PlantedCorpus {
    pub fn topic_of(&self, item_id: &str) -> Option<usize> {
        self.item_topics
            .iter()
            .find(|t| t.item_id == item_id)
            .map(|t| t.topic)
    }
}

/// Items are spread round-robin over topics and described with topic words
/// padded by short filler words. Every user has a long-term topic; a
/// `shift_fraction` share of users switches to a different recent topic for
/// the last 60% of their history, which covers their validation and test
/// events. Within a topic, items are picked without replacement with
/// Zipf-distributed popularity.
pub fn generate_planted(params: &SynthParams) -> Result<PlantedCorpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let vocabulary = topic_vocabulary(params.n_topics, &mut rng);

    let mut items = Vec::with_capacity(params.n_items);
    let mut item_topics = Vec::with_capacity(params.n_items);
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); params.n_topics];
    for i in 0..params.n_items {
        let topic = i % params.n_topics;
        let id = format!("item{i:04}");
        items.push(synth_item(&id, i, &vocabulary[topic], &mut rng));
        item_topics.push(ItemTopic { item_id: id, topic });
        by_topic[topic].push(i);
    }

    let n_shifted = (params.shift_fraction * params.n_users as f64).round() as usize;
    let mut order: Vec<usize> = (0..params.n_users).collect();
    order.shuffle(&mut rng);
    let shifted: BTreeSet<usize> = order[..n_shifted].iter().copied().collect();

    let mut interactions = Vec::new();
    let mut labels = Vec::with_capacity(params.n_users);
    for u in 0..params.n_users {
        let user_id = format!("user{u:04}");
        let len = rng.gen_range(MIN_HISTORY..=MAX_HISTORY);
        let long_topic = rng.gen_range(0..params.n_topics);
        let is_shifted = shifted.contains(&u) && params.n_topics > 1;
        let recent_topic = if is_shifted {
            (long_topic + rng.gen_range(1..params.n_topics)) % params.n_topics
        } else {
            long_topic
        };
        let switch_index = if is_shifted {
            (EARLY_SHARE * len as f64).floor() as usize
        } else {
            len
        };
        let mut consumed = BTreeSet::new();
        for k in 0..len {
            let topic = if k < switch_index {
                long_topic
            } else {
                recent_topic
            };
            let item = pick_item(&by_topic[topic], &mut consumed, &mut rng);
            interactions.push(Interaction::new(
                user_id.clone(),
                items[item].item_id.clone(),
                BASE_TIME + u as u64 * 1_000_000 + k as u64 * 3_600,
            ));
        }
        labels.push(UserLabel {
            user_id,
            long_topic,
            recent_topic,
            shifted: is_shifted,
            switch_index,
            history_len: len,
        });
    }
    Ok(PlantedCorpus {
        items,
        item_topics,
        interactions,
        labels,
        vocabulary,
    })
}

/// Generates the corpus and writes it to `out_dir`; returns the written paths.
pub fn synth_planted_dataset(
    params: &SynthParams,
    out_dir: &Path,
) -> Result<(PlantedCorpus, Vec<PathBuf>)> {
    let corpus = generate_planted(params)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths: Vec<PathBuf> = [
        INTERACTIONS_FILE,
        ITEMS_FILE,
        USER_LABELS_FILE,
        ITEM_TOPICS_FILE,
    ]
    .iter()
    .map(|f| out_dir.join(f))
    .collect();
    jsonl::write(&paths[0], &corpus.interactions)?;
    jsonl::write(&paths[1], &corpus.items)?;
    jsonl::write(&paths[2], &corpus.labels)?;
    jsonl::write(&paths[3], &corpus.item_topics)?;
    Ok((corpus, paths))
}

fn topic_vocabulary(n_topics: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut seen = BTreeSet::new();
    (0..n_topics)
        .map(|_| {
            let mut words = Vec::with_capacity(WORDS_PER_TOPIC);
            while words.len() < WORDS_PER_TOPIC {
                let mut w = String::new();
                for _ in 0..3 {
                    w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
                    w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
                }
                if seen.insert(w.clone()) {
                    words.push(w);
                }
            }
            words
        })
        .collect()
}

fn capitalized(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn synth_item(id: &str, index: usize, words: &[String], rng: &mut ChaCha8Rng) -> ItemRecord {
    let a = &words[rng.gen_range(0..words.len())];
    let b = &words[rng.gen_range(0..words.len())];
    let title = format!("{} {} {}", capitalized(a), capitalized(b), index);
    let mut description = String::new();
    while description.len() < DESCRIPTION_CHARS {
        let mut sentence = Vec::new();
        for _ in 0..rng.gen_range(6..12) {
            if rng.gen_bool(0.5) {
                sentence.push(words[rng.gen_range(0..words.len())].as_str());
            } else {
                sentence.push(FILLER[rng.gen_range(0..FILLER.len())]);
            }
        }
        let mut s = sentence.join(" ");
        s = capitalized(&s);
        description.push_str(&s);
        description.push_str(". ");
    }
    ItemRecord::new(id, title, description.trim_end())
}

/// Zipf-weighted draw (weight `1 / (rank + 1)` by position in the topic)
/// among the topic's items the user has not consumed yet; once all are
/// consumed the whole topic is eligible again.
fn pick_item(topic_items: &[usize], consumed: &mut BTreeSet<usize>, rng: &mut ChaCha8Rng) -> usize {
    if topic_items.iter().all(|i| consumed.contains(i)) {
        topic_items.iter().for_each(|i| {
            consumed.remove(i);
        });
    }
    let weights: Vec<f64> = topic_items
        .iter()
        .enumerate()
        .map(|(rank, i)| {
            if consumed.contains(i) {
                0.0
            } else {
                1.0 / (rank + 1) as f64
            }
        })
        .collect();
    let dist = WeightedIndex::new(&weights).expect("at least one eligible item");
    let item = topic_items[dist.sample(rng)];
    consumed.insert(item);
    item
}
