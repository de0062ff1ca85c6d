//! Flat `key = value` experiment configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::wiring::{AblationVariant, Method, ModelSettings};
use crate::corpus::store::IngestConfig;
use crate::corpus::{FilterConfig, SplitFractions};
use crate::error::{Error, Result};
use crate::profiler::PromptConfig;
use crate::scorer::{AdamConfig, HeadConfig, TrainConfig};
use crate::util::{content_hash, file_sha256, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Stub,
    External,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Stub => "stub",
            ProviderKind::External => "external",
        })
    }
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stub" => Ok(ProviderKind::Stub),
            "external" => Ok(ProviderKind::External),
            _ => Err(Error::Config(format!(
                "unknown provider {s:?} (stub or external)"
            ))),
        }
    }
}

/// Everything a run depends on. Relative paths are resolved against
/// `base_dir`, the directory of the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub base_dir: PathBuf,
    pub interactions: PathBuf,
    pub items: PathBuf,
    pub output: PathBuf,
    pub profile_cache: PathBuf,
    pub vector_cache: PathBuf,
    pub seed: u64,
    pub llm_provider: ProviderKind,
    pub encoder_provider: ProviderKind,
    pub dim: usize,
    pub n_recent: usize,
    pub desc_snippet_chars: usize,
    pub min_desc_chars: usize,
    pub english_only: bool,
    pub min_history: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub methods: Vec<Method>,
    pub variant: AblationVariant,
    /// Ablation variants to run alongside the methods; empty for none.
    pub variants: Vec<AblationVariant>,
    pub k: Vec<usize>,
    pub reference: Method,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub negatives_per_positive: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub mf_factors: usize,
    pub max_in_flight: usize,
    pub retries: u32,
    pub allow_missing_profiles: bool,
}

const KEYS: [&str; 35] = [
    "interactions",
    "items",
    "output",
    "profile_cache",
    "vector_cache",
    "seed",
    "llm_provider",
    "encoder_provider",
    "dim",
    "n_recent",
    "desc_snippet_chars",
    "min_desc_chars",
    "english_only",
    "min_history",
    "train_fraction",
    "validation_fraction",
    "methods",
    "variant",
    "variants",
    "k",
    "reference",
    "batch_size",
    "max_epochs",
    "patience",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "negatives_per_positive",
    "hidden",
    "dropout",
    "mf_factors",
    "max_in_flight",
    "retries",
    "allow_missing_profiles",
];

/// Keys that locate files rather than define the experiment.
const PATH_KEYS: [&str; 5] = [
    "interactions",
    "items",
    "output",
    "profile_cache",
    "vector_cache",
];

fn join<T: fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl ExperimentConfig {
    /// Defaults around the two required input files.
    pub fn new(interactions: impl Into<PathBuf>, items: impl Into<PathBuf>) -> Self {
        let output = PathBuf::from("out");
        let train = TrainConfig::default();
        let head = HeadConfig::default();
        let filter = FilterConfig::default();
        let fractions = SplitFractions::default();
        let prompt = PromptConfig::default();
        ExperimentConfig {
            base_dir: PathBuf::from("."),
            interactions: interactions.into(),
            items: items.into(),
            profile_cache: output.join("cache").join("profiles.jsonl"),
            vector_cache: output.join("cache").join("vectors.jsonl"),
            output,
            seed: train.seed,
            llm_provider: ProviderKind::Stub,
            encoder_provider: ProviderKind::Stub,
            dim: crate::embedder::DEFAULT_DIM,
            n_recent: prompt.n_recent,
            desc_snippet_chars: prompt.desc_snippet_chars,
            min_desc_chars: filter.min_desc_chars,
            english_only: filter.english_only,
            min_history: 5,
            train_fraction: fractions.train,
            validation_fraction: fractions.validation,
            methods: Method::ALL.to_vec(),
            variant: AblationVariant::Full,
            variants: Vec::new(),
            k: crate::eval::DEFAULT_KS.to_vec(),
            reference: Method::Centric,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            learning_rate: train.adam.learning_rate,
            beta1: train.adam.beta1,
            beta2: train.adam.beta2,
            epsilon: train.adam.epsilon,
            negatives_per_positive: train.negatives_per_positive,
            hidden: head.hidden,
            dropout: head.dropout,
            mf_factors: 64,
            max_in_flight: 4,
            retries: RetryPolicy::default().retries,
            allow_missing_profiles: false,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            base
        };
        Self::parse(&text, &base)
    }

    /// Parses config text. Blank lines and `#` comments are skipped; unknown
    /// or repeated keys are errors. Cache paths default to `<output>/cache/`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut interactions = None;
        let mut items = None;
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!(
                    "line {}: unknown key {key:?}",
                    n + 1
                )));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    n + 1
                )));
            }
            match key {
                "interactions" => interactions = Some(PathBuf::from(value)),
                "items" => items = Some(PathBuf::from(value)),
                _ => pairs.push((key, value)),
            }
        }
        let (Some(interactions), Some(items)) = (interactions, items) else {
            return Err(Error::Config(
                "`interactions` and `items` are required".into(),
            ));
        };
        let mut config = Self::new(interactions, items);
        config.base_dir = base_dir.to_path_buf();
        let mut caches = (None, None);
        for (key, value) in pairs {
            match key {
                "profile_cache" => caches.0 = Some(PathBuf::from(value)),
                "vector_cache" => caches.1 = Some(PathBuf::from(value)),
                _ => config.set(key, value)?,
            }
        }
        config.profile_cache = caches
            .0
            .unwrap_or_else(|| config.output.join("cache").join("profiles.jsonl"));
        config.vector_cache = caches
            .1
            .unwrap_or_else(|| config.output.join("cache").join("vectors.jsonl"));
        config.validate()?;
        Ok(config)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "interactions" => self.interactions = value.into(),
            "items" => self.items = value.into(),
            "output" => self.output = value.into(),
            "profile_cache" => self.profile_cache = value.into(),
            "vector_cache" => self.vector_cache = value.into(),
            "seed" => self.seed = parse_one(key, value)?,
            "llm_provider" => self.llm_provider = value.parse()?,
            "encoder_provider" => self.encoder_provider = value.parse()?,
            "dim" => self.dim = parse_one(key, value)?,
            "n_recent" => self.n_recent = parse_one(key, value)?,
            "desc_snippet_chars" => self.desc_snippet_chars = parse_one(key, value)?,
            "min_desc_chars" => self.min_desc_chars = parse_one(key, value)?,
            "english_only" => self.english_only = parse_one(key, value)?,
            "min_history" => self.min_history = parse_one(key, value)?,
            "train_fraction" => self.train_fraction = parse_one(key, value)?,
            "validation_fraction" => self.validation_fraction = parse_one(key, value)?,
            "methods" => self.methods = parse_list(key, value)?,
            "variant" => self.variant = value.parse()?,
            "variants" => self.variants = parse_list(key, value)?,
            "k" => self.k = parse_list(key, value)?,
            "reference" => self.reference = value.parse()?,
            "batch_size" => self.batch_size = parse_one(key, value)?,
            "max_epochs" => self.max_epochs = parse_one(key, value)?,
            "patience" => self.patience = parse_one(key, value)?,
            "learning_rate" => self.learning_rate = parse_one(key, value)?,
            "beta1" => self.beta1 = parse_one(key, value)?,
            "beta2" => self.beta2 = parse_one(key, value)?,
            "epsilon" => self.epsilon = parse_one(key, value)?,
            "negatives_per_positive" => self.negatives_per_positive = parse_one(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "dropout" => self.dropout = parse_one(key, value)?,
            "mf_factors" => self.mf_factors = parse_one(key, value)?,
            "max_in_flight" => self.max_in_flight = parse_one(key, value)?,
            "retries" => self.retries = parse_one(key, value)?,
            "allow_missing_profiles" => self.allow_missing_profiles = parse_one(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.n_recent == 0 {
            return fail("dim and n_recent must be positive".into());
        }
        if self.k.is_empty() || self.k.contains(&0) {
            return fail("k needs at least one positive cutoff".into());
        }
        if self.methods.is_empty() && self.variants.is_empty() {
            return fail("nothing to run: methods and variants are both empty".into());
        }
        if self.methods.len() > 1 && !self.methods.contains(&self.reference) {
            return fail(format!(
                "reference {} is not among the methods",
                self.reference
            ));
        }
        if !self.variants.is_empty() && !self.variants.contains(&AblationVariant::Full) {
            return fail("ablations need the full variant".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} is outside [0, 1)", self.dropout));
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        if self.max_in_flight == 0 || self.mf_factors == 0 {
            return fail("max_in_flight and mf_factors must be positive".into());
        }
        let f = (self.train_fraction, self.validation_fraction);
        if !(f.0 > 0.0 && f.1 > 0.0 && f.0 + f.1 < 1.0) {
            return fail(format!(
                "split fractions {f:?} leave no room for a test slice"
            ));
        }
        self.train_config().validate()
    }

    /// Canonical text form: every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let p = |path: &Path| path.to_string_lossy().into_owned();
        let values: Vec<(&str, String)> = vec![
            ("interactions", p(&self.interactions)),
            ("items", p(&self.items)),
            ("output", p(&self.output)),
            ("profile_cache", p(&self.profile_cache)),
            ("vector_cache", p(&self.vector_cache)),
            ("seed", self.seed.to_string()),
            ("llm_provider", self.llm_provider.to_string()),
            ("encoder_provider", self.encoder_provider.to_string()),
            ("dim", self.dim.to_string()),
            ("n_recent", self.n_recent.to_string()),
            ("desc_snippet_chars", self.desc_snippet_chars.to_string()),
            ("min_desc_chars", self.min_desc_chars.to_string()),
            ("english_only", self.english_only.to_string()),
            ("min_history", self.min_history.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("methods", join(&self.methods)),
            ("variant", self.variant.to_string()),
            ("variants", join(&self.variants)),
            ("k", join(&self.k)),
            ("reference", self.reference.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            (
                "negatives_per_positive",
                self.negatives_per_positive.to_string(),
            ),
            ("hidden", join(&self.hidden)),
            ("dropout", self.dropout.to_string()),
            ("mf_factors", self.mf_factors.to_string()),
            ("max_in_flight", self.max_in_flight.to_string()),
            ("retries", self.retries.to_string()),
            (
                "allow_missing_profiles",
                self.allow_missing_profiles.to_string(),
            ),
        ];
        values
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// The same text with every path made absolute, so that it can be run
    /// from anywhere.
    pub fn snapshot(&self) -> String {
        let mut c = self.clone();
        for path in [
            &mut c.interactions,
            &mut c.items,
            &mut c.output,
            &mut c.profile_cache,
            &mut c.vector_cache,
        ] {
            *path = absolute(&self.base_dir.join(&*path));
        }
        c.to_text()
    }

    /// Hash of the settings (paths excluded) and of the two input files'
    /// contents: identical data and settings give the same hash wherever
    /// they live.
    pub fn config_hash(&self) -> Result<String> {
        let settings: String = self
            .to_text()
            .lines()
            .filter(|l| !PATH_KEYS.iter().any(|k| l.starts_with(&format!("{k} "))))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut parts = vec![settings];
        for path in [self.interactions_path(), self.items_path()] {
            parts.push(file_sha256(&path)?);
        }
        Ok(content_hash(&parts))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn interactions_path(&self) -> PathBuf {
        self.resolve(&self.interactions)
    }

    pub fn items_path(&self) -> PathBuf {
        self.resolve(&self.items)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            filter: FilterConfig {
                min_desc_chars: self.min_desc_chars,
                english_only: self.english_only,
            },
            min_history: self.min_history,
            fractions: SplitFractions {
                train: self.train_fraction,
                validation: self.validation_fraction,
            },
        }
    }

    pub fn prompt_config(&self) -> PromptConfig {
        PromptConfig {
            n_recent: self.n_recent,
            desc_snippet_chars: self.desc_snippet_chars,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            negatives_per_positive: self.negatives_per_positive,
            seed: self.seed,
        }
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            hidden: self.hidden.clone(),
            dropout: self.dropout,
        }
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            dim: self.dim,
            n_recent: self.n_recent,
            train: self.train_config(),
            head: self.head_config(),
            mf_factors: self.mf_factors,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.retries,
            ..RetryPolicy::default()
        }
    }
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "interactions = data/events.jsonl\nitems = data/items.jsonl\n";

    #[test]
    fn defaults_fill_everything_but_the_inputs() {
        let c = ExperimentConfig::parse(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(c.dim, 384);
        assert_eq!(c.k, vec![10, 20]);
        assert_eq!(c.methods, Method::ALL.to_vec());
        assert_eq!(c.profile_cache, PathBuf::from("out/cache/profiles.jsonl"));
        assert_eq!(
            c.interactions_path(),
            PathBuf::from("/base/data/events.jsonl")
        );
        assert_eq!(c.train_config(), TrainConfig::default());
        assert!(ExperimentConfig::parse("items = x\n", Path::new(".")).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let text = format!(
            "{MINIMAL}# comment\nseed = 7\nmethods = mf, llm-tp\nreference = mf\nvariants = full,dp\nhidden = 32,8\nlearning_rate = 0.0025\noutput = runs/a\n"
        );
        let c = ExperimentConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(c.methods, vec![Method::Mf, Method::LlmTp]);
        assert_eq!(c.variants, vec![AblationVariant::Full, AblationVariant::Dp]);
        assert_eq!(c.vector_cache, PathBuf::from("runs/a/cache/vectors.jsonl"));
        let again = ExperimentConfig::parse(&c.to_text(), Path::new(".")).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), c.to_text());
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid_entries() {
        let bad = [
            format!("{MINIMAL}colour = red\n"),
            format!("{MINIMAL}seed = 1\nseed = 2\n"),
            format!("{MINIMAL}methods = mf, knn\n"),
            format!("{MINIMAL}variant = half\n"),
            format!("{MINIMAL}dim = 0\n"),
            format!("{MINIMAL}methods = mf,popularity\n"),
            format!("{MINIMAL}variants = st,lt\n"),
            format!("{MINIMAL}dropout = 1\n"),
            format!("{MINIMAL}train_fraction = 0.9\n"),
            format!("{MINIMAL}just a line\n"),
        ];
        for text in bad {
            assert!(
                ExperimentConfig::parse(&text, Path::new(".")).is_err(),
                "{text}"
            );
        }
    }

    #[test]
    fn hash_ignores_locations_but_not_settings() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("e.jsonl"), "{}\n").unwrap();
        std::fs::write(dir.path().join("i.jsonl"), "{}\n").unwrap();
        let base = "interactions = e.jsonl\nitems = i.jsonl\n";
        let a = ExperimentConfig::parse(base, dir.path()).unwrap();
        let b =
            ExperimentConfig::parse(&format!("{base}output = elsewhere\n"), dir.path()).unwrap();
        let c = ExperimentConfig::parse(&format!("{base}seed = 1\n"), dir.path()).unwrap();
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        assert_ne!(a.config_hash().unwrap(), c.config_hash().unwrap());
        let before = a.config_hash().unwrap();
        std::fs::write(dir.path().join("i.jsonl"), "{} \n").unwrap();
        assert_ne!(a.config_hash().unwrap(), before);
        let snap = ExperimentConfig::parse(&a.snapshot(), Path::new("/")).unwrap();
        assert!(snap.interactions.is_absolute());
        assert_eq!(
            snap.interactions_path(),
            std::path::absolute(dir.path().join("e.jsonl")).unwrap()
        );
    }
}
