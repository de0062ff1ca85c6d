//! Natural-language short-term and long-term user profiles.
//!
//! Each user gets three prompts rendered from their train slice: a short-term
//! prompt over the most recent `n_recent` items, a long-term prompt over the
//! whole slice, and a general prompt (no recency emphasis) used by the
//! no-temporal-split ablation. Prompts go to a [`GenerationClient`], or to the
//! deterministic offline stub, and results are cached by prompt fingerprint.

mod cache;
mod client;
mod stub;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, Interaction, SplitDataset};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::util::{bounded_map, content_hash, RetryPolicy};

pub use cache::ProfileCache;
pub use client::{GenerationClient, GenerationRequest, GenerationResponse, HttpGenerationClient};
pub use stub::stub_profile;

pub const PROFILES_FILE: &str = "profiles.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Short,
    Long,
    General,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Short, PromptKind::Long, PromptKind::General];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Short => "short",
            PromptKind::Long => "long",
            PromptKind::General => "general",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const ITEMS_PLACEHOLDER: &str = "{items}";
pub const COUNT_PLACEHOLDER: &str = "{n}";

const SHORT_TEMPLATE: &str = "Summarize the user's most recent interactions (the last {n} items) \
focusing on immediate interests and temporary trends.\n\n\
Most recent items, oldest first:\n{items}\n\nShort-term profile:";

const LONG_TEMPLATE: &str =
    "Analyze the user's entire interaction history ({n} items) to identify \
stable, persistent preferences and overarching themes.\n\n\
Full history, oldest first:\n{items}\n\nLong-term profile:";

const GENERAL_TEMPLATE: &str =
    "Write a single summary of this user's overall preferences based on \
all of their interactions ({n} items). Treat every interaction equally and do not separate \
recent interests from older ones.\n\n\
Interactions, oldest first:\n{items}\n\nUser profile:";

/// A prompt with `{items}` and `{n}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        for placeholder in [ITEMS_PLACEHOLDER, COUNT_PLACEHOLDER] {
            if !text.contains(placeholder) {
                return Err(Error::invalid(format!(
                    "{kind} template lacks the {placeholder} placeholder"
                )));
            }
        }
        Ok(PromptTemplate { kind, text })
    }

    pub fn builtin(kind: PromptKind) -> Self {
        let text = match kind {
            PromptKind::Short => SHORT_TEMPLATE,
            PromptKind::Long => LONG_TEMPLATE,
            PromptKind::General => GENERAL_TEMPLATE,
        };
        PromptTemplate {
            kind,
            text: text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub short: PromptTemplate,
    pub long: PromptTemplate,
    pub general: PromptTemplate,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            short: PromptTemplate::builtin(PromptKind::Short),
            long: PromptTemplate::builtin(PromptKind::Long),
            general: PromptTemplate::builtin(PromptKind::General),
        }
    }
}

impl PromptTemplates {
    pub fn get(&self, kind: PromptKind) -> &PromptTemplate {
        match kind {
            PromptKind::Short => &self.short,
            PromptKind::Long => &self.long,
            PromptKind::General => &self.general,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub n_recent: usize,
    pub desc_snippet_chars: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            n_recent: 5,
            desc_snippet_chars: 200,
        }
    }
}

/// The events a prompt of `kind` covers: the last `n_recent` for short-term,
/// everything otherwise.
pub fn prompt_window(kind: PromptKind, events: &[Interaction], n_recent: usize) -> &[Interaction] {
    match kind {
        PromptKind::Short => &events[events.len().saturating_sub(n_recent)..],
        PromptKind::Long | PromptKind::General => events,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub text: String,
    /// Items listed in the prompt, in the order they appear.
    pub item_ids: Vec<String>,
}

fn snippet(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((cut, _)) => format!("{}...", text[..cut].trim_end()),
        None => text.to_string(),
    }
}

pub fn render_prompt(
    template: &PromptTemplate,
    events: &[Interaction],
    catalog: &Catalog,
    config: &PromptConfig,
) -> Result<RenderedPrompt> {
    if events.is_empty() {
        return Err(Error::invalid(
            "cannot render a prompt from an empty history",
        ));
    }
    let window = prompt_window(template.kind, events, config.n_recent);
    let mut lines = Vec::with_capacity(window.len());
    for (pos, event) in window.iter().enumerate() {
        let item = catalog.get(&event.item_id)?;
        lines.push(format!(
            "{}. {}: {}",
            pos + 1,
            item.title,
            snippet(&item.description, config.desc_snippet_chars)
        ));
    }
    let text = template
        .text
        .replace(COUNT_PLACEHOLDER, &window.len().to_string())
        .replace(ITEMS_PLACEHOLDER, &lines.join("\n"));
    Ok(RenderedPrompt {
        kind: template.kind,
        text,
        item_ids: window.iter().map(|e| e.item_id.clone()).collect(),
    })
}

/// Renders the short, long and general prompts for one user.
pub fn render_all(
    templates: &PromptTemplates,
    events: &[Interaction],
    catalog: &Catalog,
    config: &PromptConfig,
) -> Result<[RenderedPrompt; 3]> {
    Ok([
        render_prompt(&templates.short, events, catalog, config)?,
        render_prompt(&templates.long, events, catalog, config)?,
        render_prompt(&templates.general, events, catalog, config)?,
    ])
}

pub fn prompt_fingerprint(prompts: &[RenderedPrompt; 3]) -> String {
    let parts: Vec<&str> = prompts
        .iter()
        .flat_map(|p| [p.kind.as_str(), p.text.as_str()])
        .collect();
    content_hash(&parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSource {
    External,
    Stub,
}

impl FromStr for ProfileSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "external" => Ok(ProfileSource::External),
            "stub" => Ok(ProfileSource::Stub),
            other => Err(Error::Config(format!("unknown provider {other:?}"))),
        }
    }
}

impl fmt::Display for ProfileSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileSource::External => "external",
            ProfileSource::Stub => "stub",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalProfiles {
    pub user_id: String,
    pub prompt_fingerprint: String,
    pub short_text: String,
    pub long_text: String,
    /// Single undifferentiated summary; absent in records written without it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub general_text: Option<String>,
    pub source: ProfileSource,
}

/// Asks `client` for the short, long and general profiles of one user.
/// `train_events` must be the user's train slice only.
pub fn generate_profiles(
    user_id: &str,
    train_events: &[Interaction],
    catalog: &Catalog,
    client: &dyn GenerationClient,
    templates: &PromptTemplates,
    config: &PromptConfig,
    retry: &RetryPolicy,
) -> Result<TemporalProfiles> {
    let prompts = render_all(templates, train_events, catalog, config)?;
    let mut texts = Vec::with_capacity(3);
    for prompt in &prompts {
        let text = retry.run(|| client.generate(&prompt.text))?;
        if text.trim().is_empty() {
            return Err(Error::Client(format!(
                "empty {} profile for user {user_id:?}",
                prompt.kind
            )));
        }
        texts.push(text);
    }
    let general = texts.pop();
    let long_text = texts.pop().expect("three prompts");
    let short_text = texts.pop().expect("three prompts");
    Ok(TemporalProfiles {
        user_id: user_id.to_string(),
        prompt_fingerprint: prompt_fingerprint(&prompts),
        short_text,
        long_text,
        general_text: general,
        source: ProfileSource::External,
    })
}

pub enum Provider {
    Stub,
    External(Arc<dyn GenerationClient>),
}

impl Provider {
    pub fn source(&self) -> ProfileSource {
        match self {
            Provider::Stub => ProfileSource::Stub,
            Provider::External(_) => ProfileSource::External,
        }
    }
}

/// Users whose profiles could not be produced, with the reason.
#[derive(Debug, Default)]
pub struct ProfileRun {
    pub profiles: BTreeMap<String, TemporalProfiles>,
    pub failures: Vec<(String, Error)>,
}

/// Profile generation for a whole corpus: cache lookup, bounded concurrency
/// and retries around a provider.
pub struct Profiler {
    pub templates: PromptTemplates,
    pub config: PromptConfig,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    provider: Provider,
    cache: Option<ProfileCache>,
    provider_calls: AtomicUsize,
}

impl Profiler {
    pub fn new(provider: Provider, config: PromptConfig) -> Self {
        Profiler {
            templates: PromptTemplates::default(),
            config,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            provider,
            cache: None,
            provider_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ProfileCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Number of users for which the provider was invoked.
    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::Relaxed)
    }

    pub fn profile_user(
        &self,
        user_id: &str,
        train_events: &[Interaction],
        catalog: &Catalog,
    ) -> Result<TemporalProfiles> {
        let prompts = render_all(&self.templates, train_events, catalog, &self.config)?;
        let fingerprint = prompt_fingerprint(&prompts);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(user_id, &fingerprint) {
                if hit.source == self.provider.source() && hit.general_text.is_some() {
                    return Ok(hit);
                }
            }
        }
        self.provider_calls.fetch_add(1, Ordering::Relaxed);
        let profiles = match &self.provider {
            Provider::Stub => {
                let text = |kind| stub_profile(train_events, catalog, kind, self.config.n_recent);
                TemporalProfiles {
                    user_id: user_id.to_string(),
                    prompt_fingerprint: fingerprint,
                    short_text: text(PromptKind::Short)?,
                    long_text: text(PromptKind::Long)?,
                    general_text: Some(text(PromptKind::General)?),
                    source: ProfileSource::Stub,
                }
            }
            Provider::External(client) => generate_profiles(
                user_id,
                train_events,
                catalog,
                client.as_ref(),
                &self.templates,
                &self.config,
                &self.retry,
            )?,
        };
        if let Some(cache) = &self.cache {
            cache.put(&profiles)?;
        }
        Ok(profiles)
    }

    /// Profiles every user from their train slice.
    pub fn profile_all(&self, splits: &SplitDataset, catalog: &Catalog) -> ProfileRun {
        let users: Vec<_> = splits.iter().collect();
        let results = bounded_map(&users, self.max_in_flight, |split| {
            self.profile_user(&split.user_id, &split.train, catalog)
        });
        let mut run = ProfileRun::default();
        for (split, result) in users.iter().zip(results) {
            match result {
                Ok(p) => {
                    run.profiles.insert(split.user_id.clone(), p);
                }
                Err(e) => {
                    log::error!("profiling user {:?} failed: {e}", split.user_id);
                    run.failures.push((split.user_id.clone(), e));
                }
            }
        }
        run
    }
}

pub fn write_profiles(path: &Path, profiles: &BTreeMap<String, TemporalProfiles>) -> Result<()> {
    jsonl::write(path, profiles.values())
}

pub fn read_profiles(path: &Path) -> Result<BTreeMap<String, TemporalProfiles>> {
    let records: Vec<TemporalProfiles> = jsonl::read(path)?.into_strict()?;
    Ok(records
        .into_iter()
        .map(|p| (p.user_id.clone(), p))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ItemRecord;
    use std::sync::Mutex;

    pub(crate) fn fixture(n: usize) -> (Catalog, Vec<Interaction>) {
        let catalog = Catalog::from_items((0..n).map(|i| {
            ItemRecord::new(
                format!("i{i:02}"),
                format!("Film {i:02}"),
                format!("Description of film number {i:02}. ").repeat(12),
            )
        }))
        .unwrap();
        let events = (0..n)
            .map(|i| Interaction::new("u", format!("i{i:02}"), i as u64))
            .collect();
        (catalog, events)
    }

    struct Canned {
        reply: String,
        calls: Mutex<Vec<String>>,
    }

    impl GenerationClient for Canned {
        fn generate(&self, prompt: &str) -> Result<String> {
            self.calls.lock().unwrap().push(prompt.to_string());
            Ok(self.reply.clone())
        }
    }

    fn canned(reply: &str) -> Arc<Canned> {
        Arc::new(Canned {
            reply: reply.into(),
            calls: Mutex::new(Vec::new()),
        })
    }

    #[test]
    fn short_prompt_lists_last_n_titles() {
        let (catalog, events) = fixture(10);
        let cfg = PromptConfig::default();
        let p = render_prompt(
            &PromptTemplate::builtin(PromptKind::Short),
            &events,
            &catalog,
            &cfg,
        )
        .unwrap();
        assert_eq!(p.item_ids, vec!["i05", "i06", "i07", "i08", "i09"]);
        let positions: Vec<_> = (5..10)
            .map(|i| p.text.find(&format!("Film {i:02}")).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(!p.text.contains("Film 04"));
        assert!(p.text.contains("last 5 items"));
    }

    #[test]
    fn long_prompt_lists_everything() {
        let (catalog, events) = fixture(10);
        let p = render_prompt(
            &PromptTemplate::builtin(PromptKind::Long),
            &events,
            &catalog,
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(p.item_ids.len(), 10);
        assert!((0..10).all(|i| p.text.contains(&format!("Film {i:02}"))));
    }

    #[test]
    fn descriptions_are_truncated() {
        let (catalog, events) = fixture(3);
        let cfg = PromptConfig {
            n_recent: 5,
            desc_snippet_chars: 20,
        };
        let p = render_prompt(
            &PromptTemplate::builtin(PromptKind::Long),
            &events,
            &catalog,
            &cfg,
        )
        .unwrap();
        assert!(p.text.contains("1. Film 00: Description of film..."));
    }

    #[test]
    fn rendering_is_deterministic() {
        let (catalog, events) = fixture(8);
        let t = PromptTemplates::default();
        let cfg = PromptConfig::default();
        let a = render_all(&t, &events, &catalog, &cfg).unwrap();
        let b = render_all(&t, &events, &catalog, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(prompt_fingerprint(&a), prompt_fingerprint(&b));
    }

    #[test]
    fn unknown_item_and_empty_history_rejected() {
        let (catalog, _) = fixture(2);
        let t = PromptTemplate::builtin(PromptKind::Long);
        let cfg = PromptConfig::default();
        assert!(render_prompt(&t, &[], &catalog, &cfg).is_err());
        let ghost = [Interaction::new("u", "nope", 1)];
        assert!(matches!(
            render_prompt(&t, &ghost, &catalog, &cfg),
            Err(Error::UnknownItem(_))
        ));
    }

    #[test]
    fn templates_need_placeholders() {
        assert!(PromptTemplate::new(PromptKind::Short, "no placeholders").is_err());
        assert!(PromptTemplate::new(PromptKind::Short, "{items} only").is_err());
        assert!(PromptTemplate::new(PromptKind::Short, "{n}: {items}").is_ok());
    }

    #[test]
    fn canned_client_fills_both_profiles() {
        let (catalog, events) = fixture(6);
        let client = canned("R");
        let p = generate_profiles(
            "u",
            &events,
            &catalog,
            client.as_ref(),
            &PromptTemplates::default(),
            &PromptConfig::default(),
            &RetryPolicy::default(),
        )
        .unwrap();
        assert_eq!(p.short_text, "R");
        assert_eq!(p.long_text, "R");
        assert_eq!(p.source, ProfileSource::External);
        assert_eq!(client.calls.lock().unwrap().len(), 3);
    }

    #[test]
    fn identical_histories_share_fingerprint() {
        let (catalog, events) = fixture(6);
        let other: Vec<_> = events
            .iter()
            .map(|e| Interaction::new("v", e.item_id.clone(), e.timestamp))
            .collect();
        let client = canned("R");
        let gen = |uid: &str, ev: &[Interaction]| {
            generate_profiles(
                uid,
                ev,
                &catalog,
                client.as_ref(),
                &PromptTemplates::default(),
                &PromptConfig::default(),
                &RetryPolicy::default(),
            )
            .unwrap()
        };
        assert_eq!(
            gen("u", &events).prompt_fingerprint,
            gen("v", &other).prompt_fingerprint
        );
    }

    struct Failing;

    impl GenerationClient for Failing {
        fn generate(&self, _prompt: &str) -> Result<String> {
            Err(Error::Client("unavailable".into()))
        }
    }

    #[test]
    fn failures_surface_instead_of_fabricating() {
        let (catalog, events) = fixture(6);
        let mut profiler = Profiler::new(
            Provider::External(Arc::new(Failing)),
            PromptConfig::default(),
        );
        profiler.retry = RetryPolicy {
            retries: 1,
            base_delay_ms: 0,
        };
        assert!(profiler.profile_user("u", &events, &catalog).is_err());
    }

    #[test]
    fn cache_hit_skips_the_client() {
        let (catalog, events) = fixture(6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.cache");
        let client = canned("R");
        let first = Profiler::new(Provider::External(client.clone()), PromptConfig::default())
            .with_cache(ProfileCache::open(&path).unwrap());
        first.profile_user("u", &events, &catalog).unwrap();
        assert_eq!(client.calls.lock().unwrap().len(), 3);

        let second = Profiler::new(Provider::External(client.clone()), PromptConfig::default())
            .with_cache(ProfileCache::open(&path).unwrap());
        let p = second.profile_user("u", &events, &catalog).unwrap();
        assert_eq!(p.short_text, "R");
        assert_eq!(second.provider_calls(), 0);
        assert_eq!(client.calls.lock().unwrap().len(), 3);
    }

    #[test]
    fn stub_cache_entries_do_not_serve_external_requests() {
        let (catalog, events) = fixture(6);
        let cache_dir = tempfile::tempdir().unwrap();
        let path = cache_dir.path().join("c");
        Profiler::new(Provider::Stub, PromptConfig::default())
            .with_cache(ProfileCache::open(&path).unwrap())
            .profile_user("u", &events, &catalog)
            .unwrap();
        let client = canned("ext");
        let p = Profiler::new(Provider::External(client), PromptConfig::default())
            .with_cache(ProfileCache::open(&path).unwrap())
            .profile_user("u", &events, &catalog)
            .unwrap();
        assert_eq!(p.short_text, "ext");
    }
}
