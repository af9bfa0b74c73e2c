//! HTTP front door.
//!
//! One writer at a time ingests into a private copy of the store, appends
//! the accepted events to the log, then publishes a new immutable snapshot
//! (store plus rebuilt index). Readers clone the current snapshot `Arc` and
//! never see a half-applied batch.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::feature_space::{FeatureSchema, GroupWeights};
use crate::knn_engine::ProfileIndex;
use crate::recommender::{HybridConfig, PopularityStats, PopularityWindow, RecommendationResponse, Recommender};
use crate::record_store::{append_events, rfc3339, Pseudonymizer, RawEvent, RecordStore, ANON_KEY_ENV};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Event log; created on first ingestion when missing.
    pub store: PathBuf,
    pub profiles: Option<PathBuf>,
    /// Weight file; all-ones when absent.
    pub weights: Option<PathBuf>,
    pub k: usize,
    pub n: usize,
    pub alpha: f64,
    pub cold_start_min_events: usize,
    pub window_days: Option<u32>,
    pub partitions: usize,
    /// Environment variable holding the anonymization secret.
    pub anonymization_key_env: String,
    /// Fixed reference instant (RFC 3339) for windows; wall clock when absent.
    pub reference_time: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let d = HybridConfig::default();
        Self {
            listen: "127.0.0.1:8080".into(),
            store: PathBuf::from("events.jsonl"),
            profiles: None,
            weights: None,
            k: d.k,
            n: d.n,
            alpha: d.alpha,
            cold_start_min_events: d.cold_start_min_events,
            window_days: None,
            partitions: d.partitions,
            anonymization_key_env: ANON_KEY_ENV.into(),
            reference_time: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.hybrid()?;
        Ok(config)
    }

    pub fn hybrid(&self) -> Result<HybridConfig> {
        let config = HybridConfig {
            alpha: self.alpha,
            k: self.k,
            n: self.n,
            cold_start_min_events: self.cold_start_min_events,
            window: self.window_days.map(|d| TimeDelta::days(i64::from(d))),
            popularity_window: PopularityWindow::All,
            partitions: self.partitions,
        };
        config.validate()?;
        Ok(config)
    }

    fn reference(&self) -> Result<Option<DateTime<Utc>>> {
        self.reference_time
            .as_deref()
            .map(|s| rfc3339::parse(s).map_err(|e| Error::Config(format!("reference_time: {e}"))))
            .transpose()
    }
}

/// A consistent read view: the store and the index built from it.
#[derive(Debug)]
pub struct Snapshot {
    pub store: RecordStore,
    /// Absent while the catalog is empty.
    pub index: Option<ProfileIndex>,
    pub reference: DateTime<Utc>,
}

impl Snapshot {
    fn build(store: RecordStore, window: Option<TimeDelta>, reference: DateTime<Utc>) -> Result<Self> {
        let index = build_index(&store, window, reference)?;
        Ok(Self { store, index, reference })
    }
}

fn build_index(
    store: &RecordStore,
    window: Option<TimeDelta>,
    reference: DateTime<Utc>,
) -> Result<Option<ProfileIndex>> {
    if store.catalog().is_empty() {
        return Ok(None);
    }
    let schema = Arc::new(FeatureSchema::for_store(store)?);
    ProfileIndex::build(store, schema, window, reference).map(Some)
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct RecommendQuery {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub window_days: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub deck_id: String,
    pub predicted_rating: f64,
    /// `neighbors`, or `deck_mean` when no neighbor rated the deck.
    pub source: String,
}

pub struct Service {
    config: ServiceConfig,
    defaults: HybridConfig,
    pseudonymizer: Pseudonymizer,
    weights: GroupWeights,
    fixed_reference: Option<DateTime<Utc>>,
    writer: Mutex<RecordStore>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl Service {
    pub fn new(
        config: ServiceConfig,
        store: RecordStore,
        pseudonymizer: Pseudonymizer,
        weights: GroupWeights,
    ) -> Result<Self> {
        let defaults = config.hybrid()?;
        weights.validate()?;
        let fixed_reference = config.reference()?;
        let reference = fixed_reference.unwrap_or_else(Utc::now);
        let snapshot = Snapshot::build(store.clone(), defaults.window, reference)?;
        Ok(Self {
            config,
            defaults,
            pseudonymizer,
            weights,
            fixed_reference,
            writer: Mutex::new(store),
            snapshot: RwLock::new(Arc::new(snapshot)),
        })
    }

    /// Loads the store, weights and key named by `config`.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let key = std::env::var(&config.anonymization_key_env)
            .map_err(|_| Error::Config(format!("{} is not set", config.anonymization_key_env)))?;
        let pseudonymizer = Pseudonymizer::new(key)?;
        let store = if config.store.exists() {
            RecordStore::load(&config.store, config.profiles.as_deref(), None)?
        } else {
            RecordStore::new()
        };
        let weights = match &config.weights {
            Some(p) => GroupWeights::load(p)?,
            None => GroupWeights::default(),
        };
        Self::new(config, store, pseudonymizer, weights)
    }

    fn reference(&self) -> DateTime<Utc> {
        self.fixed_reference.unwrap_or_else(Utc::now)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    pub fn pseudonym(&self, raw_user_id: &str) -> String {
        self.pseudonymizer.pseudonymize(raw_user_id)
    }

    /// Validates the whole batch, persists it and publishes a new snapshot.
    /// Nothing is applied when any event is rejected.
    pub fn ingest(&self, batch: Vec<RawEvent>) -> Result<Vec<String>> {
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        let mut next = writer.clone();
        let before = next.events().len();
        let ids =
            batch.into_iter().map(|raw| next.ingest_event(raw, &self.pseudonymizer)).collect::<Result<Vec<_>>>()?;
        append_events(&self.config.store, &next.events()[before..])?;
        let snapshot = Snapshot::build(next.clone(), self.defaults.window, self.reference())?;
        *writer = next;
        *self.snapshot.write().expect("snapshot lock poisoned") = Arc::new(snapshot);
        Ok(ids)
    }

    pub fn recommend(&self, raw_user_id: &str, query: &RecommendQuery) -> Result<RecommendationResponse> {
        let mut config = self.defaults.clone();
        config.n = query.n.unwrap_or(config.n);
        config.k = query.k.unwrap_or(config.k);
        config.alpha = query.alpha.unwrap_or(config.alpha);
        if let Some(days) = query.window_days {
            config.window = Some(TimeDelta::days(i64::from(days)));
        }
        config.validate()?;

        let snap = self.snapshot();
        let user = self.pseudonym(raw_user_id);
        let rebuilt;
        let index = if config.window == self.defaults.window {
            snap.index.as_ref()
        } else {
            rebuilt = build_index(&snap.store, config.window, snap.reference)?;
            rebuilt.as_ref()
        };
        let Some(index) = index else {
            return Ok(RecommendationResponse { user_id: raw_user_id.to_owned(), cold_start: true, items: Vec::new() });
        };
        let rec = Recommender::new(index, &snap.store, self.weights, snap.reference);
        let mut response = rec.recommend(&user, &config)?;
        response.user_id = raw_user_id.to_owned();
        Ok(response)
    }

    pub fn popular(&self, window: PopularityWindow) -> Vec<PopularityStats> {
        let snap = self.snapshot();
        crate::recommender::popularity(&snap.store, window, snap.reference, &Default::default())
    }

    pub fn predict(&self, raw_user_id: &str, deck_id: &str) -> Result<Prediction> {
        let snap = self.snapshot();
        let user = self.pseudonym(raw_user_id);
        let index = snap.index.as_ref().ok_or_else(|| Error::UnknownUser(raw_user_id.to_owned()))?;
        if !index.contains(&user) {
            return Err(Error::UnknownUser(raw_user_id.to_owned()));
        }
        let rec = Recommender::new(index, &snap.store, self.weights, snap.reference);
        let (predicted_rating, source) = match rec.predict_rating(&user, deck_id, self.defaults.k) {
            Ok(r) => (r, "neighbors"),
            Err(Error::NoPrediction { .. }) => {
                let ratings = snap.store.latest_ratings_for_deck(deck_id);
                if ratings.is_empty() {
                    return Err(Error::NoPrediction { user: raw_user_id.to_owned(), deck: deck_id.to_owned() });
                }
                (ratings.values().sum::<f64>() / ratings.len() as f64, "deck_mean")
            }
            Err(e) => return Err(e),
        };
        Ok(Prediction {
            user_id: raw_user_id.to_owned(),
            deck_id: deck_id.to_owned(),
            predicted_rating,
            source: source.into(),
        })
    }
}

struct ApiError {
    error: Error,
    index: Option<usize>,
}

impl From<Error> for ApiError {
    fn from(error: Error) -> Self {
        Self { error, index: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.error {
            Error::UnknownUser(_) | Error::NoPrediction { .. } => StatusCode::NOT_FOUND,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let mut body = json!({ "error": self.error.to_string() });
        if let Error::InvalidField { field, .. } = &self.error {
            body["field"] = json!(field);
        }
        if let Some(i) = self.index {
            body["index"] = json!(i);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn health(State(svc): State<Arc<Service>>) -> Json<Value> {
    let snap = svc.snapshot();
    Json(json!({ "status": "ok", "users": snap.store.user_count(), "decks": snap.store.catalog().len() }))
}

async fn post_events(State(svc): State<Arc<Service>>, Json(body): Json<Value>) -> ApiResult<(StatusCode, Json<Value>)> {
    let items = match body {
        Value::Array(items) => items,
        single => vec![single],
    };
    let batch = items
        .iter()
        .enumerate()
        .map(|(i, v)| RawEvent::from_json(v).map_err(|error| ApiError { error, index: Some(i) }))
        .collect::<ApiResult<Vec<_>>>()?;
    let ids = tokio::task::spawn_blocking(move || svc.ingest(batch))
        .await
        .map_err(|e| Error::Io(std::io::Error::other(e)))??;
    Ok((StatusCode::ACCEPTED, Json(json!({ "accepted": ids.len(), "event_ids": ids }))))
}

async fn recommendations(
    State(svc): State<Arc<Service>>,
    UrlPath(user): UrlPath<String>,
    Query(query): Query<RecommendQuery>,
) -> ApiResult<Json<RecommendationResponse>> {
    let response = tokio::task::spawn_blocking(move || svc.recommend(&user, &query))
        .await
        .map_err(|e| Error::Io(std::io::Error::other(e)))??;
    Ok(Json(response))
}

#[derive(Deserialize)]
struct PopularQuery {
    window: Option<String>,
}

async fn popular(State(svc): State<Arc<Service>>, Query(q): Query<PopularQuery>) -> ApiResult<Json<Value>> {
    let window: PopularityWindow = q.window.as_deref().unwrap_or("all").parse()?;
    let items = svc.popular(window);
    Ok(Json(json!({ "window": window.as_str(), "items": items })))
}

async fn predicted_rating(
    State(svc): State<Arc<Service>>,
    UrlPath((user, deck)): UrlPath<(String, String)>,
) -> ApiResult<Json<Prediction>> {
    Ok(Json(svc.predict(&user, &deck)?))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/events", post(post_events))
        .route("/v1/users/{id}/recommendations", get(recommendations))
        .route("/v1/users/{id}/predicted-rating/{deck_id}", get(predicted_rating))
        .route("/v1/decks/popular", get(popular))
        .with_state(service)
}

/// Binds `config.listen` and serves until interrupted.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let listen = config.listen.clone();
    let service = Arc::new(Service::open(config)?);
    let listener = tokio::net::TcpListener::bind(&listen).await?;
    eprintln!("cfrec listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Per-field defaults echoed by `cfrec serve --print-config`.
pub fn default_config_toml() -> String {
    toml::to_string(&ServiceConfig::default()).expect("config serializes")
}
