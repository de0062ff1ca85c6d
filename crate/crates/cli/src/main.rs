use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use temporec_core::checkpoint::Checkpoint;
use temporec_core::corpus::store::{
    ingest, read_data_dir, read_ingest_meta, write_data_dir, CorpusData, IngestConfig,
};
use temporec_core::corpus::{compute_ecdf, compute_stats, FilterConfig, SplitFractions};
use temporec_core::embedder::{EmbeddingTable, VectorCache};
use temporec_core::eval::{evaluate, ranking_tasks, ComparisonReport};
use temporec_core::harness::{
    build_embedder, build_profiler, epoch_log_csv, model_name, profile_corpus, run_ablations,
    run_experiment, scorer_for, synth_planted_dataset, train_model, AblationVariant,
    ExperimentConfig, Method, ModelSettings, ProviderKind, RunOutcome, SynthParams,
    INTERACTIONS_FILE, ITEMS_FILE,
};
use temporec_core::profiler::{read_profiles, write_profiles, TemporalProfiles, PROFILES_FILE};
use temporec_core::scorer::{AdamConfig, HeadConfig, TrainConfig};

#[derive(Parser)]
#[command(
    name = "temporec",
    version,
    about = "Temporal user profiling for top-K recommendation"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, filter and split raw interaction and item files.
    Ingest(IngestArgs),
    /// Corpus statistics and the ECDF of per-user history lengths.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        ecdf: Option<PathBuf>,
    },
    /// Generate short-term, long-term and general profiles for every user.
    Profile(ProfileArgs),
    /// Embed items and profiles into a vector cache.
    Embed(EmbedArgs),
    /// Train one method or variant and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate checkpoints and write a comparison report.
    Eval(EvalArgs),
    /// Run a whole experiment from a config file.
    Run(RunArgs),
    /// Run the ablation variants from a config file.
    Ablate(RunArgs),
    /// Write a synthetic corpus with a planted preference shift.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    min_desc_chars: usize,
    #[arg(long, default_value_t = 5)]
    min_history: usize,
    /// Keep items whose descriptions do not look English.
    #[arg(long)]
    no_english_filter: bool,
    #[arg(long, default_value_t = 0.6)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, default_value = "stub")]
    provider: ProviderKind,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 3)]
    retries: u32,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long, default_value_t = 5)]
    n_recent: usize,
    #[arg(long, default_value_t = 200)]
    desc_snippet_chars: usize,
    /// Profile cache; defaults to `<data>/profile_cache.jsonl`.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Drop users whose profiles fail instead of aborting.
    #[arg(long)]
    allow_missing_profiles: bool,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long, default_value_t = 384)]
    dim: usize,
    #[arg(long)]
    cache: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Vector cache written by `embed`; required for neural methods.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    method: Method,
    #[arg(long, default_value = "full")]
    variant: AblationVariant,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-epoch losses as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    n_recent: usize,
    #[arg(long, default_value_t = 2048)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 4)]
    negatives: usize,
    #[arg(long, value_delimiter = ',', default_value = "128")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 64)]
    mf_factors: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Row that significance and gains are computed against.
    #[arg(long, default_value = "centric")]
    reference: String,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    k: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 300)]
    items: usize,
    #[arg(long, default_value_t = 4)]
    topics: usize,
    #[arg(long, default_value_t = 0.5)]
    shift: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Stats { data, out, ecdf } => cmd_stats(&data, out.as_deref(), ecdf.as_deref()),
        Command::Profile(a) => cmd_profile(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => {
            let outcome = run_experiment(&load_config(&a)?)?;
            print_outcome(&outcome);
            Ok(())
        }
        Command::Ablate(a) => {
            let outcome = run_ablations(&load_config(&a)?)?;
            print_outcome(&outcome);
            Ok(())
        }
        Command::Synth(a) => cmd_synth(a),
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let config = IngestConfig {
        filter: FilterConfig {
            min_desc_chars: a.min_desc_chars,
            english_only: !a.no_english_filter,
        },
        min_history: a.min_history,
        fractions: SplitFractions {
            train: a.train_fraction,
            validation: a.validation_fraction,
        },
    };
    let (data, meta) = ingest(&a.interactions, &a.items, &config)?;
    write_data_dir(&a.out, &data, &meta)?;
    println!(
        "{} users, {} items retained ({} malformed interaction lines, {} malformed item lines)",
        meta.users_retained, meta.items_retained, meta.malformed_interactions, meta.malformed_items
    );
    Ok(())
}

fn cmd_stats(data: &Path, out: Option<&Path>, ecdf: Option<&Path>) -> Result<()> {
    let corpus = read_data_dir(data)?;
    let s = compute_stats(&corpus.histories)?;
    let mut csv = String::from("statistic,value\n");
    for (k, v) in [
        ("users", s.user_count.to_string()),
        ("items", s.item_count.to_string()),
        ("interactions", s.interaction_count.to_string()),
        ("mean", s.mean.to_string()),
        ("median", s.median.to_string()),
        ("mode", s.mode.to_string()),
        ("std_dev", s.std_dev.to_string()),
    ] {
        writeln!(csv, "{k},{v}")?;
    }
    print!("{csv}");
    if let Some(path) = out {
        std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = ecdf {
        let mut text = String::from("history_length,fraction_of_users\n");
        for (len, frac) in compute_ecdf(&corpus.histories)? {
            writeln!(text, "{len},{frac}")?;
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// A config carrying the CLI's provider settings, for the builders that
/// take one.
fn provider_config(provider: &ProviderArgs) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("-", "-");
    c.llm_provider = provider.provider;
    c.encoder_provider = provider.provider;
    c.max_in_flight = provider.max_in_flight;
    c.retries = provider.retries;
    c
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let mut corpus = read_data_dir(&a.data)?;
    let mut config = provider_config(&a.provider);
    config.n_recent = a.n_recent;
    config.desc_snippet_chars = a.desc_snippet_chars;
    config.profile_cache = a
        .cache
        .unwrap_or_else(|| a.data.join("profile_cache.jsonl"));
    let profiler = build_profiler(&config)?;
    let (profiles, dropped) = profile_corpus(&profiler, &mut corpus, a.allow_missing_profiles)?;
    if !dropped.is_empty() {
        let meta = read_ingest_meta(&a.data)?;
        write_data_dir(&a.data, &corpus, &meta)?;
        println!(
            "dropped {} users without profiles from {}",
            dropped.len(),
            a.data.display()
        );
    }
    write_profiles(&a.data.join(PROFILES_FILE), &profiles)?;
    println!(
        "{} users profiled ({} provider calls)",
        profiles.len(),
        profiler.provider_calls()
    );
    Ok(())
}

fn load_profiles(data: &Path) -> Result<BTreeMap<String, TemporalProfiles>> {
    let path = data.join(PROFILES_FILE);
    if path.exists() {
        Ok(read_profiles(&path)?)
    } else {
        Ok(BTreeMap::new())
    }
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let corpus = read_data_dir(&a.data)?;
    let profiles = load_profiles(&a.data)?;
    let mut config = provider_config(&a.provider);
    config.dim = a.dim;
    config.vector_cache = a.cache.clone();
    let embedder = build_embedder(&config)?;
    let table = embedder.embed_corpus(&corpus.catalog, &profiles)?;
    println!(
        "{} items and {} profiled users embedded at dim {} ({} provider calls) into {}",
        table.items.len(),
        table.profiles.len(),
        table.dim,
        embedder.provider_calls(),
        a.cache.display()
    );
    Ok(())
}

fn load_table(
    data: &Path,
    embeddings: Option<&Path>,
    corpus: &CorpusData,
) -> Result<Option<EmbeddingTable>> {
    let Some(path) = embeddings else {
        return Ok(None);
    };
    if !path.exists() {
        bail!("embedding cache {} does not exist", path.display());
    }
    let cache = VectorCache::open(path)?;
    Ok(Some(EmbeddingTable::resolve(
        &cache,
        &corpus.catalog,
        &load_profiles(data)?,
    )?))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let corpus = read_data_dir(&a.data)?;
    let table = load_table(&a.data, a.embeddings.as_deref(), &corpus)?;
    if a.method.is_neural() && table.is_none() {
        bail!("--embeddings is required for {}", a.method);
    }
    let settings = ModelSettings {
        dim: table.as_ref().map(|t| t.dim).unwrap_or(0),
        n_recent: a.n_recent,
        train: TrainConfig {
            batch_size: a.batch_size,
            max_epochs: a.max_epochs,
            patience: a.patience,
            adam: AdamConfig {
                learning_rate: a.learning_rate,
                ..AdamConfig::default()
            },
            negatives_per_positive: a.negatives,
            seed: a.seed,
        },
        head: HeadConfig {
            hidden: a.hidden,
            dropout: a.dropout,
        },
        mf_factors: a.mf_factors,
    };
    settings.train.validate()?;
    let (params, log) = train_model(a.method, a.variant, &corpus, table.as_ref(), &settings)?;
    let hash = Checkpoint::settings_hash(&settings)?;
    Checkpoint::new(a.method, a.variant, hash, settings, params).write(&a.out)?;
    if let Some(log) = &log {
        println!(
            "{} epochs, best validation loss {:.6} at epoch {}",
            log.epochs.len(),
            log.best_val_loss,
            log.best_epoch
        );
        if let Some(path) = &a.log {
            std::fs::write(path, epoch_log_csv(log))
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn row_name(method: Method, variant: AblationVariant) -> String {
    match (method, variant) {
        (Method::LlmTp, AblationVariant::Full) => method.to_string(),
        _ => model_name(method, variant),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let corpus = read_data_dir(&a.data)?;
    let table = load_table(&a.data, a.embeddings.as_deref(), &corpus)?;
    let tasks = ranking_tasks(&corpus.splits, &corpus.catalog);
    let mut results = Vec::new();
    for path in &a.models {
        let ckpt = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
        let scorer = scorer_for(
            &ckpt.params,
            ckpt.method,
            ckpt.variant,
            &corpus,
            table.as_ref(),
            ckpt.settings.n_recent,
        )?;
        results.push((
            row_name(ckpt.method, ckpt.variant),
            evaluate(scorer.as_ref(), &tasks, &a.k)?,
        ));
    }
    let reference = if results.len() > 1 {
        if !results.iter().any(|(name, _)| *name == a.reference) {
            bail!(
                "reference {:?} is not among the evaluated models",
                a.reference
            );
        }
        Some(a.reference.as_str())
    } else {
        None
    };
    let report = ComparisonReport::build(&results, reference)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("report.csv"), report.to_csv())?;
    std::fs::write(a.out.join("report.md"), report.to_markdown())?;
    std::fs::write(
        a.out.join("per_user.csv"),
        ComparisonReport::per_user_csv(&results),
    )?;
    print!("{}", report.to_markdown());
    println!(
        "{} users evaluated, {} skipped; reports in {}",
        tasks.tasks.len(),
        tasks.skipped.len(),
        a.out.display()
    );
    Ok(())
}

fn load_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_file(&a.config)
        .with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn print_outcome(outcome: &RunOutcome) {
    for report in [&outcome.comparison, &outcome.ablation]
        .into_iter()
        .flatten()
    {
        println!("{}", report.to_markdown());
    }
    let a = &outcome.artifact;
    println!(
        "config {} seed {}: {} users evaluated, {} skipped, {} dropped",
        a.config_hash,
        a.seed,
        a.evaluated_users,
        a.skipped_users,
        a.dropped_users.len()
    );
    println!(
        "provider calls: {} profile, {} embedding",
        outcome.provider_calls.profiles, outcome.provider_calls.embeddings
    );
    println!("outputs in {}", outcome.output_dir.display());
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let params = SynthParams {
        seed: a.seed,
        n_users: a.users,
        n_items: a.items,
        n_topics: a.topics,
        shift_fraction: a.shift,
    };
    let (corpus, paths) = synth_planted_dataset(&params, &a.out)?;
    let config = format!(
        "interactions = {INTERACTIONS_FILE}\nitems = {ITEMS_FILE}\noutput = run\nseed = {}\n",
        a.seed
    );
    std::fs::write(a.out.join("experiment.cfg"), config)?;
    println!(
        "{} users ({} shifted), {} items, {} interactions",
        corpus.labels.len(),
        corpus.labels.iter().filter(|l| l.shifted).count(),
        corpus.items.len(),
        corpus.interactions.len()
    );
    for p in paths {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", a.out.join("experiment.cfg").display());
    Ok(())
}
