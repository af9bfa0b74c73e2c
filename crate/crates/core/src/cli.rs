//! The `cfrec` command line.
//!
//! Exit status: 0 on success, 1 for bad arguments or invalid input, 2 for
//! I/O failures. Subcommands that draw random numbers take a mandatory
//! `--seed` and write byte-identical output for identical inputs.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::evaluation::synthetic::{generate_synthetic, SynthParams};
use crate::evaluation::{run_offline_eval, EvalConfig};
use crate::feature_space::{FeatureSchema, GroupWeights};
use crate::knn_engine::ProfileIndex;
use crate::recommender::{popularity, HybridConfig, PopularityWindow, Recommender};
use crate::record_store::{
    append_events, read_profiles, read_raw_events, rfc3339, Pseudonymizer, RecordStore, ANON_KEY_ENV,
};
use crate::service::{default_config_toml, serve, ServiceConfig};
use crate::weight_optimizer::{optimize_weights, EvalParams, GaConfig};

#[derive(Debug, Parser)]
#[command(name = "cfrec", version, about = "User-based collaborative filtering over deck activity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pseudonymize and append client events (JSON lines) to a store.
    Ingest(IngestArgs),
    /// Top-n hybrid recommendations for one user.
    Recommend(RecommendArgs),
    /// Deck popularity ranking.
    Popular(PopularArgs),
    /// Predicted rating of one deck for one user.
    Predict(PredictArgs),
    /// Offline evaluation of the cf, popularity and hybrid variants.
    Evaluate(EvaluateArgs),
    /// Genetic search over the feature-group weights.
    OptimizeWeights(OptimizeArgs),
    /// Clustered synthetic activity data.
    Generate(GenerateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct StoreArgs {
    /// Event log (JSON lines).
    #[arg(long)]
    store: PathBuf,
    /// Profile file (JSON lines).
    #[arg(long)]
    profiles: Option<PathBuf>,
}

impl StoreArgs {
    fn load(&self) -> Result<RecordStore> {
        RecordStore::load(&self.store, self.profiles.as_deref(), None)
    }
}

#[derive(Debug, Args)]
struct UserArgs {
    /// User id as stored (already a pseudonym).
    #[arg(long)]
    user: String,
    /// Treat --user as a raw id and pseudonymize it with the key in CFREC_ANON_KEY.
    #[arg(long)]
    anonymize: bool,
}

impl UserArgs {
    fn resolve(&self) -> Result<String> {
        if self.anonymize {
            Ok(Pseudonymizer::from_env()?.pseudonymize(&self.user))
        } else {
            Ok(self.user.clone())
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    store: PathBuf,
    /// Raw events, one JSON object per line.
    #[arg(long)]
    input: PathBuf,
    /// Raw profiles to merge into the profile file.
    #[arg(long, requires = "profiles")]
    profiles_in: Option<PathBuf>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Environment variable holding the anonymization key.
    #[arg(long, default_value = ANON_KEY_ENV)]
    key_env: String,
}

#[derive(Debug, Args)]
struct RecommendArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    user: UserArgs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    cold_start_min_events: usize,
    /// Only events from the last N days feed the feature vectors.
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long, default_value_t = 1)]
    partitions: usize,
    /// Weight file; all-ones when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Reference instant (RFC 3339); defaults to the latest event in the store.
    #[arg(long)]
    at: Option<String>,
}

#[derive(Debug, Args)]
struct PopularArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, default_value = "all")]
    window: PopularityWindow,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long)]
    at: Option<String>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    user: UserArgs,
    #[arg(long)]
    deck: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long)]
    at: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, default_value_t = 0.2)]
    holdout_fraction: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    cold_start_min_events: usize,
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// JSON report.
    #[arg(long)]
    out: PathBuf,
    /// Also write `variant,metric,value` rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    seed: u64,
    /// Best weights found.
    #[arg(long)]
    out: PathBuf,
    /// Per-generation best and mean fitness (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    population: usize,
    #[arg(long, default_value_t = 50)]
    generations: usize,
    #[arg(long, default_value_t = 0.2)]
    holdout_fraction: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    n: usize,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 50)]
    decks: usize,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long)]
    seed: u64,
    /// Event log to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    profiles_out: Option<PathBuf>,
    #[arg(long, default_value_t = 15.0)]
    events_per_user: f64,
    #[arg(long, default_value_t = 0.3)]
    rating_fraction: f64,
    /// Share of events on decks outside the user's cluster.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_config: bool,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cfrec: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Recommend(a) => recommend(a),
        Command::Popular(a) => popular(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::OptimizeWeights(a) => optimize(a),
        Command::Generate(a) => generate(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn load_weights(path: Option<&Path>) -> Result<GroupWeights> {
    path.map_or_else(|| Ok(GroupWeights::default()), GroupWeights::load)
}

fn reference(at: Option<&str>, store: &RecordStore) -> Result<DateTime<Utc>> {
    match at {
        Some(s) => rfc3339::parse(s).map_err(|e| Error::Argument(format!("--at: {e}"))),
        None => Ok(store.latest_timestamp().unwrap_or(DateTime::UNIX_EPOCH)),
    }
}

fn build_index(store: &RecordStore, window_days: Option<u32>, reference: DateTime<Utc>) -> Result<ProfileIndex> {
    let schema = Arc::new(FeatureSchema::for_store(store)?);
    ProfileIndex::build(store, schema, window_days.map(|d| TimeDelta::days(i64::from(d))), reference)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let key = std::env::var(&a.key_env).map_err(|_| Error::Config(format!("{} is not set", a.key_env)))?;
    let pseudonymizer = Pseudonymizer::new(key)?;
    let mut store = if a.store.exists() {
        RecordStore::load(&a.store, a.profiles.as_deref().filter(|p| p.exists()), None)?
    } else {
        RecordStore::new()
    };
    let before = store.events().len();
    let raw = read_raw_events(&a.input)?;
    for (i, event) in raw.into_iter().enumerate() {
        store
            .ingest_event(event, &pseudonymizer)
            .map_err(|e| Error::Malformed(format!("{}: record {}: {e}", a.input.display(), i + 1)))?;
    }
    if let (Some(src), Some(dst)) = (&a.profiles_in, &a.profiles) {
        let incoming = read_profiles(src)?;
        let mut vocab = store.vocabulary().clone();
        let extra = crate::record_store::Vocabulary::from_profiles(&incoming);
        vocab.skills.extend(extra.skills);
        vocab.locations.extend(extra.locations);
        let mut merged = RecordStore::with_vocabulary(vocab);
        for p in store.profiles().cloned() {
            merged.insert_profile(p)?;
        }
        for p in incoming {
            merged.ingest_profile(p, &pseudonymizer)?;
        }
        merged.write_profiles(fs::File::create(dst)?)?;
    }
    let added = &store.events()[before..];
    append_events(&a.store, added)?;
    println!("ingested {} events", added.len());
    Ok(())
}

fn recommend(a: RecommendArgs) -> Result<()> {
    let config = HybridConfig {
        alpha: a.alpha,
        k: a.k,
        n: a.n,
        cold_start_min_events: a.cold_start_min_events,
        window: a.window_days.map(|d| TimeDelta::days(i64::from(d))),
        partitions: a.partitions,
        ..HybridConfig::default()
    };
    config.validate()?;
    let store = a.store.load()?;
    let user = a.user.resolve()?;
    let weights = load_weights(a.weights.as_deref())?;
    let reference = reference(a.at.as_deref(), &store)?;
    let index = build_index(&store, a.window_days, reference)?;
    let response = Recommender::new(&index, &store, weights, reference).recommend(&user, &config)?;
    let mut out = std::io::stdout().lock();
    for item in &response.items {
        writeln!(out, "{}\t{:.6}\t{}", item.deck_id, item.score, item.source.as_str())?;
    }
    Ok(())
}

fn popular(a: PopularArgs) -> Result<()> {
    let store = a.store.load()?;
    let reference = reference(a.at.as_deref(), &store)?;
    let mut out = std::io::stdout().lock();
    for s in popularity(&store, a.window, reference, &Default::default()).iter().take(a.n) {
        writeln!(out, "{}\t{:.6}", s.deck_id, s.raw_score)?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let store = a.store.load()?;
    let user = a.user.resolve()?;
    let weights = load_weights(a.weights.as_deref())?;
    let reference = reference(a.at.as_deref(), &store)?;
    let index = build_index(&store, a.window_days, reference)?;
    let rating = Recommender::new(&index, &store, weights, reference).predict_rating(&user, &a.deck, a.k)?;
    println!("{rating:.6}");
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let store = a.store.load()?;
    let config = EvalConfig {
        holdout_fraction: a.holdout_fraction,
        k: a.k,
        n: a.n,
        alpha: a.alpha,
        cold_start_min_events: a.cold_start_min_events,
        weights: load_weights(a.weights.as_deref())?,
        seed: a.seed,
        window_days: a.window_days,
    };
    let summary = run_offline_eval(&store, &config)?;
    fs::write(&a.out, summary.to_json())?;
    if let Some(csv) = &a.csv {
        fs::write(csv, summary.to_csv())?;
    }
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let store = a.store.load()?;
    let config = GaConfig { population_size: a.population, generations: a.generations, ..GaConfig::new(a.seed) };
    let params = EvalParams { holdout_fraction: a.holdout_fraction, k: a.k, n: a.n };
    let result = optimize_weights(&store, &config, &params)?;
    let mut json = result.weights().to_json();
    json.push('\n');
    fs::write(&a.out, json)?;
    if let Some(trace) = &a.trace {
        fs::write(trace, result.trace_csv())?;
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let params = SynthParams {
        n_users: a.users,
        n_decks: a.decks,
        n_clusters: a.clusters,
        events_per_user: a.events_per_user,
        rating_fraction: a.rating_fraction,
        noise_fraction: a.noise,
        rng_seed: a.seed,
    };
    let data = generate_synthetic(&params)?;
    let store = data.into_store()?;
    store.save(&a.out, a.profiles_out.as_deref())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    if a.print_config {
        print!("{}", default_config_toml());
        return Ok(());
    }
    let mut config = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(v) = a.listen {
        config.listen = v;
    }
    if let Some(v) = a.store {
        config.store = v;
    }
    if a.profiles.is_some() {
        config.profiles = a.profiles;
    }
    if a.weights.is_some() {
        config.weights = a.weights;
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(config))
}
