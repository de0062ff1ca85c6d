//! Experiment orchestration: configuration, method and variant wiring, the
//! planted-signal generator and end-to-end runs.
//!
//! A run writes everything under the configured output directory:
//!
//! ```text
//! config.cfg                 snapshot with absolute paths
//! data/                      ingested corpus and generated profiles
//! cache/                     profile and vector caches (default location)
//! audit.json                 leakage audit
//! checkpoints/<model>.ckpt.json
//! logs/<model>.epochs.csv
//! report/                    method comparison
//! ablation/                  variant comparison and gains
//! artifact.json              hashes of all of the above
//! ```

mod audit;
mod config;
mod synth;
mod wiring;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::store::{ingest, write_data_dir, CorpusData};
use crate::embedder::{
    Embedder, EmbeddingTable, EncoderProvider, HttpEncoder, StubEncoder, VectorCache,
};
use crate::error::{check_dim, Error, Result};
use crate::eval::{
    ablation_gains, evaluate, ranking_tasks, AblationGains, ComparisonReport, MetricResult, TaskSet,
};
use crate::jsonl;
use crate::profiler::{
    write_profiles, HttpGenerationClient, ProfileCache, Profiler, PromptTemplates, Provider,
    TemporalProfiles, PROFILES_FILE,
};
use crate::scorer::TrainLog;
use crate::util::file_sha256;

pub use audit::{leakage_audit, LeakageReport, Violation};
pub use config::{ExperimentConfig, ProviderKind};
pub use synth::{
    generate_planted, synth_planted_dataset, ItemTopic, PlantedCorpus, SynthParams, UserLabel,
    INTERACTIONS_FILE, ITEMS_FILE, ITEM_TOPICS_FILE, USER_LABELS_FILE,
};
pub use wiring::{
    scorer_for, train_model, user_inputs, wire_variant, wiring, AblationVariant, InputSource,
    Method, MfScorer, ModelParams, ModelSettings, NeuralScorer, Wiring,
};

pub const CONFIG_SNAPSHOT: &str = "config.cfg";
pub const ARTIFACT_FILE: &str = "artifact.json";
pub const AUDIT_FILE: &str = "audit.json";
pub const DATA_DIR: &str = "data";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_DIR: &str = "logs";
pub const REPORT_DIR: &str = "report";
pub const ABLATION_DIR: &str = "ablation";

const PROVIDER_TIMEOUT: Duration = Duration::from_secs(120);

/// Build and platform details recorded with every run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

/// An output file, relative to the run directory, with its SHA-256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config_hash: String,
    pub seed: u64,
    /// The config snapshot; running it again reproduces the reports.
    pub config: String,
    pub environment: Environment,
    pub checkpoints: Vec<ArtifactFile>,
    pub epoch_logs: Vec<ArtifactFile>,
    pub reports: Vec<ArtifactFile>,
    pub evaluated_users: usize,
    pub skipped_users: usize,
    /// Users dropped because their profiles could not be generated.
    pub dropped_users: Vec<String>,
}

/// How often each external provider was actually invoked (cache misses).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProviderCalls {
    pub profiles: usize,
    pub embeddings: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub artifact: RunArtifact,
    pub provider_calls: ProviderCalls,
    pub comparison: Option<ComparisonReport>,
    pub ablation: Option<ComparisonReport>,
    pub gains: Option<AblationGains>,
}

/// Ingest, profile, embed, audit, train every configured method (and any
/// configured ablation variants), evaluate and report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    execute(config, &config.methods, &config.variants)
}

/// Like [`run_experiment`] but trains only the `llm-tp` variants (all five
/// when the config lists none) and writes the ablation report and gains.
pub fn run_ablations(config: &ExperimentConfig) -> Result<RunOutcome> {
    let variants = if config.variants.is_empty() {
        AblationVariant::ALL.to_vec()
    } else {
        config.variants.clone()
    };
    if !variants.contains(&AblationVariant::Full) {
        return Err(Error::Config("ablations need the full variant".into()));
    }
    execute(config, &[], &variants)
}

/// File stem for a trained model.
pub fn model_name(method: Method, variant: AblationVariant) -> String {
    match method {
        Method::LlmTp => format!("{method}-{variant}"),
        _ => method.to_string(),
    }
}

pub fn stamp_line(config_hash: &str, seed: u64) -> String {
    format!("# config {config_hash} seed {seed}")
}

pub fn build_profiler(config: &ExperimentConfig) -> Result<Profiler> {
    let provider = match config.llm_provider {
        ProviderKind::Stub => Provider::Stub,
        ProviderKind::External => {
            Provider::External(Arc::new(HttpGenerationClient::from_env(PROVIDER_TIMEOUT)?))
        }
    };
    let mut profiler = Profiler::new(provider, config.prompt_config())
        .with_cache(ProfileCache::open(&config.resolve(&config.profile_cache))?);
    profiler.retry = config.retry_policy();
    profiler.max_in_flight = config.max_in_flight;
    Ok(profiler)
}

pub fn build_embedder(config: &ExperimentConfig) -> Result<Embedder> {
    let provider: Arc<dyn EncoderProvider> = match config.encoder_provider {
        ProviderKind::Stub => Arc::new(StubEncoder::new(config.dim)),
        ProviderKind::External => Arc::new(HttpEncoder::from_env(config.dim, PROVIDER_TIMEOUT)?),
    };
    let mut embedder = Embedder::new(provider)
        .with_cache(VectorCache::open(&config.resolve(&config.vector_cache))?);
    embedder.retry = config.retry_policy();
    embedder.max_in_flight = config.max_in_flight;
    Ok(embedder)
}

/// Removes users from the histories, splits and user set of a corpus.
pub fn drop_users(corpus: &mut CorpusData, users: &[String]) {
    for u in users {
        corpus.histories.remove(u);
        corpus.splits.users.remove(u);
        corpus.catalog.users.remove(u);
    }
}

/// Profiles every user. Users whose generation failed are dropped from the
/// corpus when `allow_missing` is set; otherwise the failure is returned.
pub fn profile_corpus(
    profiler: &Profiler,
    corpus: &mut CorpusData,
    allow_missing: bool,
) -> Result<(BTreeMap<String, TemporalProfiles>, Vec<String>)> {
    let run = profiler.profile_all(&corpus.splits, &corpus.catalog);
    if run.failures.is_empty() {
        return Ok((run.profiles, Vec::new()));
    }
    let dropped: Vec<String> = run.failures.iter().map(|(u, _)| u.clone()).collect();
    if !allow_missing {
        let (user, err) = &run.failures[0];
        return Err(Error::Client(format!(
            "{} users could not be profiled (first: {user}: {err})",
            dropped.len()
        )));
    }
    log::warn!(
        "dropping {} users without profiles from every method",
        dropped.len()
    );
    drop_users(corpus, &dropped);
    Ok((run.profiles, dropped))
}

pub fn epoch_log_csv(log: &TrainLog) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in &log.epochs {
        writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_loss).unwrap();
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Writer<'a> {
    root: &'a Path,
    stamp: String,
    footer: String,
}

impl Writer<'_> {
    /// Writes a stamped CSV (leading `#` line) and returns its record.
    fn csv(&self, rel: &str, body: &str) -> Result<ArtifactFile> {
        self.raw(rel, &format!("{}\n{body}", self.stamp))
    }

    fn markdown(&self, rel: &str, body: &str) -> Result<ArtifactFile> {
        self.raw(rel, &format!("{body}\n{}\n", self.footer))
    }

    fn raw(&self, rel: &str, text: &str) -> Result<ArtifactFile> {
        let path = self.root.join(rel);
        write_text(&path, text)?;
        Ok(ArtifactFile {
            path: rel.to_string(),
            sha256: file_sha256(&path)?,
        })
    }
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    report: &'a LeakageReport,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn execute(
    config: &ExperimentConfig,
    methods: &[Method],
    variants: &[AblationVariant],
) -> Result<RunOutcome> {
    stage("config", config.validate())?;
    let hash = stage("config", config.config_hash())?;
    let root = config.output_dir();
    let writer = Writer {
        root: &root,
        stamp: stamp_line(&hash, config.seed),
        footer: format!("_Config {hash}, seed {}._", config.seed),
    };
    let mut calls = ProviderCalls::default();
    stage("config", writer.raw(CONFIG_SNAPSHOT, &config.snapshot()))?;

    let (mut corpus, meta) = stage(
        "ingest",
        ingest(
            &config.interactions_path(),
            &config.items_path(),
            &config.ingest_config(),
        ),
    )?;
    stage(
        "ingest",
        write_data_dir(&root.join(DATA_DIR), &corpus, &meta),
    )?;
    log::info!(
        "ingested {} users and {} items",
        corpus.splits.len(),
        corpus.catalog.len()
    );

    let needs_profiles = methods.contains(&Method::LlmTp) || !variants.is_empty();
    let needs_vectors = needs_profiles || methods.iter().any(|m| m.is_neural());
    let mut profiles = BTreeMap::new();
    let mut dropped = Vec::new();
    if needs_profiles {
        let profiler = stage("profile", build_profiler(config))?;
        (profiles, dropped) = stage(
            "profile",
            profile_corpus(&profiler, &mut corpus, config.allow_missing_profiles),
        )?;
        calls.profiles = profiler.provider_calls();
        stage(
            "profile",
            write_profiles(&root.join(DATA_DIR).join(PROFILES_FILE), &profiles),
        )?;
    }

    let table: Option<EmbeddingTable> = if needs_vectors {
        let embedder = stage("embed", build_embedder(config))?;
        let table = stage("embed", embedder.embed_corpus(&corpus.catalog, &profiles))?;
        stage("embed", check_dim(config.dim, table.dim))?;
        calls.embeddings = embedder.provider_calls();
        Some(table)
    } else {
        None
    };

    let audit = stage(
        "audit",
        leakage_audit(
            &corpus,
            &PromptTemplates::default(),
            &config.prompt_config(),
        ),
    )?;
    let mut reports = vec![stage(
        "audit",
        writer.raw(
            AUDIT_FILE,
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&AuditRecord {
                    config_hash: &hash,
                    seed: config.seed,
                    report: &audit,
                })
                .map_err(|e| Error::invalid(e.to_string()))?
            ),
        ),
    )?];
    if !audit.is_clean() {
        return Err(Error::invalid(format!(
            "{} held-out items reached model inputs; see {AUDIT_FILE}",
            audit.violations.len()
        ))
        .in_stage("audit"));
    }

    let mut jobs: Vec<(Method, AblationVariant)> = Vec::new();
    for &m in methods {
        let v = if m == Method::LlmTp {
            config.variant
        } else {
            AblationVariant::Full
        };
        jobs.push((m, v));
    }
    for &v in variants {
        if !jobs.contains(&(Method::LlmTp, v)) {
            jobs.push((Method::LlmTp, v));
        }
    }
    let settings = config.model_settings();
    let mut checkpoints = Vec::new();
    let mut epoch_logs = Vec::new();
    let mut trained: BTreeMap<String, ModelParams> = BTreeMap::new();
    for &(m, v) in &jobs {
        let name = model_name(m, v);
        log::info!("training {name}");
        let (params, train_log) = stage(
            "train",
            train_model(m, v, &corpus, table.as_ref(), &settings),
        )?;
        let ckpt = Checkpoint::new(m, v, hash.clone(), settings.clone(), params);
        let rel = format!("{CHECKPOINT_DIR}/{name}.ckpt.json");
        checkpoints.push(stage("train", writer.raw(&rel, &ckpt.to_json()?))?);
        if let Some(train_log) = train_log {
            let rel = format!("{LOG_DIR}/{name}.epochs.csv");
            epoch_logs.push(stage(
                "train",
                writer.csv(&rel, &epoch_log_csv(&train_log)),
            )?);
        }
        trained.insert(name, ckpt.params);
    }

    let tasks = ranking_tasks(&corpus.splits, &corpus.catalog);
    let mut evaluated: BTreeMap<String, MetricResult> = BTreeMap::new();
    let mut eval = |m: Method, v: AblationVariant| -> Result<MetricResult> {
        let name = model_name(m, v);
        if let Some(r) = evaluated.get(&name) {
            return Ok(r.clone());
        }
        let scorer = scorer_for(
            &trained[&name],
            m,
            v,
            &corpus,
            table.as_ref(),
            config.n_recent,
        )?;
        let r = evaluate(scorer.as_ref(), &tasks, &config.k)?;
        evaluated.insert(name, r.clone());
        Ok(r)
    };

    let mut comparison = None;
    if !methods.is_empty() {
        let results = stage(
            "eval",
            jobs.iter()
                .take(methods.len())
                .map(|&(m, v)| Ok((m.to_string(), eval(m, v)?)))
                .collect::<Result<Vec<_>>>(),
        )?;
        let reference = (methods.len() > 1).then(|| config.reference.as_str());
        let report = stage("report", ComparisonReport::build(&results, reference))?;
        reports.extend(stage(
            "report",
            write_report(&writer, REPORT_DIR, &report, &results),
        )?);
        comparison = Some(report);
    }

    let (mut ablation, mut gains) = (None, None);
    if !variants.is_empty() {
        let results = stage(
            "eval",
            variants
                .iter()
                .map(|&v| Ok((v.to_string(), eval(Method::LlmTp, v)?)))
                .collect::<Result<Vec<_>>>(),
        )?;
        let full = AblationVariant::Full.as_str();
        let report = stage("report", ComparisonReport::build(&results, Some(full)))?;
        reports.extend(stage(
            "report",
            write_report(&writer, ABLATION_DIR, &report, &results),
        )?);
        if variants.len() > 1 {
            let g = stage("report", ablation_gains(&results, full))?;
            reports.push(stage(
                "report",
                writer.csv(&format!("{ABLATION_DIR}/gains.csv"), &g.to_csv()),
            )?);
            gains = Some(g);
        }
        ablation = Some(report);
    }

    let artifact = RunArtifact {
        config_hash: hash,
        seed: config.seed,
        config: config.snapshot(),
        environment: Environment::current(),
        checkpoints,
        epoch_logs,
        reports,
        evaluated_users: evaluated_users(&tasks),
        skipped_users: tasks.skipped.len(),
        dropped_users: dropped,
    };
    stage(
        "report",
        jsonl::write_json(&root.join(ARTIFACT_FILE), &artifact),
    )?;
    Ok(RunOutcome {
        output_dir: root,
        artifact,
        provider_calls: calls,
        comparison,
        ablation,
        gains,
    })
}

fn evaluated_users(tasks: &TaskSet) -> usize {
    tasks.tasks.len()
}

fn write_report(
    writer: &Writer<'_>,
    dir: &str,
    report: &ComparisonReport,
    results: &[(String, MetricResult)],
) -> Result<Vec<ArtifactFile>> {
    Ok(vec![
        writer.csv(&format!("{dir}/report.csv"), &report.to_csv())?,
        writer.markdown(&format!("{dir}/report.md"), &report.to_markdown())?,
        writer.csv(
            &format!("{dir}/per_user.csv"),
            &ComparisonReport::per_user_csv(results),
        )?,
    ])
}
