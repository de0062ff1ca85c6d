use std::collections::HashMap;

use super::{prompt_window, PromptKind};
use crate::corpus::{Catalog, Interaction};
use crate::error::{Error, Result};

const TOP_TOKENS: usize = 10;
const MIN_TOKEN_CHARS: usize = 4;

/// Offline stand-in for the LLM.
///
/// Short-term: the titles of the last `n_recent` items, oldest first.
/// Long-term and general: the ten most frequent lowercase alphabetic tokens
/// (at least four letters) over all titles and descriptions, by frequency and
/// then alphabetically.
pub fn stub_profile(
    events: &[Interaction],
    catalog: &Catalog,
    kind: PromptKind,
    n_recent: usize,
) -> Result<String> {
    if events.is_empty() {
        return Err(Error::invalid("cannot profile an empty history"));
    }
    match kind {
        PromptKind::Short => {
            let titles = prompt_window(kind, events, n_recent)
                .iter()
                .map(|e| catalog.get(&e.item_id).map(|item| item.title.as_str()))
                .collect::<Result<Vec<_>>>()?;
            Ok(format!("Recent interests: {}", titles.join("; ")))
        }
        PromptKind::Long | PromptKind::General => {
            let mut counts: HashMap<String, usize> = HashMap::new();
            for event in events {
                let item = catalog.get(&event.item_id)?;
                for text in [&item.title, &item.description] {
                    for token in text
                        .split(|c: char| !c.is_alphabetic())
                        .filter(|t| t.chars().count() >= MIN_TOKEN_CHARS)
                    {
                        *counts.entry(token.to_lowercase()).or_default() += 1;
                    }
                }
            }
            let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let top: Vec<&str> = ranked
                .iter()
                .take(TOP_TOKENS)
                .map(|(t, _)| t.as_str())
                .collect();
            Ok(format!("Enduring interests: {}", top.join(", ")))
        }
    }
}
