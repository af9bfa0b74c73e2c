//! Offline evaluation: temporal holdout split, metric suite and the
//! per-variant report.

pub mod metrics;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, TimeDelta, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_space::{FeatureSchema, GroupWeights};
use crate::knn_engine::ProfileIndex;
use crate::recommender::{HybridConfig, PopularityWindow, Recommender};
use crate::record_store::{ActivityEvent, EventKind, RecordStore};

use metrics::{binary_gains, dcg_at_n, ndcg_at_n, precision_at_n, recall_at_n, Audience};

/// Train/holdout partition of a store.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: RecordStore,
    /// Decks first associated in each user's held-out tail. Users whose tail
    /// brings no new deck are absent.
    pub holdout: BTreeMap<String, BTreeSet<String>>,
    /// Every held-out event, in timestamp order per user.
    pub holdout_events: Vec<ActivityEvent>,
}

impl Split {
    /// Latest training timestamp; anchors popularity windows at evaluation time.
    pub fn reference(&self) -> DateTime<Utc> {
        self.train.latest_timestamp().unwrap_or_default()
    }

    /// `(user, deck, rating)` for every held-out rating event.
    pub fn holdout_ratings(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.holdout_events
            .iter()
            .filter(|e| e.kind == EventKind::Rating)
            .filter_map(|e| e.value.map(|v| (e.user_id.as_str(), e.deck_id.as_str(), v)))
    }
}

/// Holds out the final `⌈fraction · count⌉` events of every user with at
/// least two events. At least one event always stays in training, and events
/// sharing the boundary timestamp stay in training so the train history
/// strictly precedes the tail.
pub fn temporal_split(store: &RecordStore, holdout_fraction: f64) -> Result<Split> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Argument(format!("holdout fraction must be in (0, 1), got {holdout_fraction}")));
    }
    let reference = store.latest_timestamp().unwrap_or_default();
    let mut held: BTreeSet<&str> = BTreeSet::new();
    let mut holdout = BTreeMap::new();
    let mut holdout_events = Vec::new();
    for user in store.user_ids() {
        let events = store.events_for(user, None, reference)?;
        let count = events.len();
        if count < 2 {
            continue;
        }
        let want = ((holdout_fraction * count as f64).ceil() as usize).min(count - 1);
        let mut cut = count - want;
        while cut < count && events[cut].timestamp == events[cut - 1].timestamp {
            cut += 1;
        }
        if cut == count {
            continue;
        }
        let (train, tail) = events.split_at(cut);
        let known: BTreeSet<&str> =
            train.iter().filter(|e| e.kind.is_association()).map(|e| e.deck_id.as_str()).collect();
        let relevant: BTreeSet<String> = tail
            .iter()
            .filter(|e| e.kind.is_association() && !known.contains(e.deck_id.as_str()))
            .map(|e| e.deck_id.clone())
            .collect();
        held.extend(tail.iter().map(|e| e.event_id.as_str()));
        holdout_events.extend(tail.iter().map(|&e| e.clone()));
        if !relevant.is_empty() {
            holdout.insert(user.to_owned(), relevant);
        }
    }
    let train = store.filtered(|e| !held.contains(e.event_id.as_str()));
    Ok(Split { train, holdout, holdout_events })
}

/// How held-out ratings are predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingPredictor {
    /// Neighbor prediction, falling back to the deck mean, then the global mean.
    Neighbors,
    /// Training mean of the deck, falling back to the global mean.
    DeckMean,
    GlobalMean,
}

/// `(predicted, actual)` pairs for every held-out rating.
pub fn rating_pairs(
    split: &Split,
    recommender: &Recommender<'_>,
    k: usize,
    predictor: RatingPredictor,
) -> Vec<(f64, f64)> {
    let mut deck_sum: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let (mut sum, mut count) = (0.0, 0usize);
    for e in split.train.events().iter().filter(|e| e.kind == EventKind::Rating) {
        let v = e.value.expect("validated ratings carry a value");
        let slot = deck_sum.entry(e.deck_id.as_str()).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
        sum += v;
        count += 1;
    }
    // Midpoint of the scale when training holds no ratings at all.
    let global = if count > 0 { sum / count as f64 } else { 3.0 };
    let deck_mean = |deck: &str| deck_sum.get(deck).map_or(global, |&(s, c)| s / c as f64);

    split
        .holdout_ratings()
        .map(|(user, deck, actual)| {
            let predicted = match predictor {
                RatingPredictor::GlobalMean => global,
                RatingPredictor::DeckMean => deck_mean(deck),
                RatingPredictor::Neighbors => {
                    recommender.predict_rating(user, deck, k).unwrap_or_else(|_| deck_mean(deck))
                }
            };
            (predicted, actual)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub holdout_fraction: f64,
    pub k: usize,
    pub n: usize,
    pub alpha: f64,
    pub cold_start_min_events: usize,
    pub weights: GroupWeights,
    pub seed: u64,
    /// Recency window (days) applied to the training feature vectors.
    pub window_days: Option<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.2,
            k: 10,
            n: 5,
            alpha: 0.7,
            cold_start_min_events: 5,
            weights: GroupWeights::default(),
            seed: 0,
            window_days: None,
        }
    }
}

impl EvalConfig {
    pub fn hybrid(&self) -> HybridConfig {
        HybridConfig {
            alpha: self.alpha,
            k: self.k,
            n: self.n,
            cold_start_min_events: self.cold_start_min_events,
            window: self.window(),
            ..HybridConfig::default()
        }
    }

    fn window(&self) -> Option<TimeDelta> {
        self.window_days.map(|d| TimeDelta::days(i64::from(d)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cf,
    Popularity,
    Hybrid,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cf, Variant::Popularity, Variant::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cf => "cf",
            Variant::Popularity => "popularity",
            Variant::Hybrid => "hybrid",
        }
    }
}

/// Macro-averaged metric values of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub dcg: f64,
    pub ndcg: f64,
    /// `None` when the holdout contains no ratings.
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
    pub coverage: f64,
    pub diversity: f64,
    pub novelty: f64,
}

impl Metrics {
    /// `(name, value)` in report order.
    pub fn entries(&self) -> [(&'static str, Option<f64>); 9] {
        [
            ("precision", Some(self.precision)),
            ("recall", Some(self.recall)),
            ("dcg", Some(self.dcg)),
            ("ndcg", Some(self.ndcg)),
            ("mse", self.mse),
            ("rmse", self.rmse),
            ("coverage", Some(self.coverage)),
            ("diversity", Some(self.diversity)),
            ("novelty", Some(self.novelty)),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub users: usize,
    pub rating_pairs: usize,
    pub metrics: Metrics,
    pub config: EvalConfig,
}

/// Every variant's report, serialized together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub reports: Vec<EvalReport>,
}

impl EvalSummary {
    pub fn get(&self, variant: Variant) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.variant == variant)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One `variant,metric,value` row per metric; missing values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,metric,value\n");
        for r in &self.reports {
            for (name, value) in r.metrics.entries() {
                let value = value.map(|v| v.to_string()).unwrap_or_default();
                writeln!(out, "{},{name},{value}", r.variant.as_str()).expect("writing to a String");
            }
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Recommendations for every holdout user under one variant, in user order.
pub fn recommend_all(
    split: &Split,
    recommender: &Recommender<'_>,
    variant: Variant,
    config: &EvalConfig,
) -> Result<Vec<(String, Vec<String>)>> {
    let users: Vec<&String> = split.holdout.keys().collect();
    let hybrid = config.hybrid();
    users
        .par_iter()
        .map(|&user| {
            let items = match variant {
                Variant::Cf => recommender.cf_recommend(user, config.k, config.n)?,
                Variant::Popularity => recommender.popular_for(user, PopularityWindow::All, config.n, false),
                Variant::Hybrid => recommender.recommend(user, &hybrid)?.items,
            };
            Ok((user.clone(), items.into_iter().map(|r| r.deck_id).collect()))
        })
        .collect()
}

/// Splits the store, recommends for every holdout user with each variant
/// and reports the macro-averaged metric suite per variant.
pub fn run_offline_eval(store: &RecordStore, config: &EvalConfig) -> Result<EvalSummary> {
    let split = temporal_split(store, config.holdout_fraction)?;
    evaluate_split(&split, config)
}

pub fn evaluate_split(split: &Split, config: &EvalConfig) -> Result<EvalSummary> {
    if split.holdout.is_empty() {
        return Err(Error::Infeasible("the split leaves no user with held-out decks".into()));
    }
    let reference = split.reference();
    let schema = std::sync::Arc::new(FeatureSchema::for_store(&split.train)?);
    let index = ProfileIndex::build(&split.train, schema, config.window(), reference)?;
    let recommender = Recommender::new(&index, &split.train, config.weights, reference);
    let audience = Audience::from_store(&split.train);
    let catalog = split.train.catalog();

    let mut reports = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let lists = recommend_all(split, &recommender, variant, config)?;
        let per_user: Vec<(f64, Option<f64>, f64, f64)> = lists
            .iter()
            .map(|(user, list)| {
                let relevant = &split.holdout[user];
                let (gains, ideal) = binary_gains(list, relevant, config.n);
                (
                    precision_at_n(list, relevant, config.n),
                    recall_at_n(list, relevant, config.n),
                    dcg_at_n(&gains),
                    ndcg_at_n(&gains, &ideal),
                )
            })
            .collect();
        let just_lists: Vec<&Vec<String>> = lists.iter().map(|(_, l)| l).collect();
        let predictor = match variant {
            Variant::Popularity => RatingPredictor::DeckMean,
            Variant::Cf | Variant::Hybrid => RatingPredictor::Neighbors,
        };
        let pairs = rating_pairs(split, &recommender, config.k, predictor);
        let mse = metrics::mse(&pairs).ok();
        let metrics = Metrics {
            precision: mean(per_user.iter().map(|u| u.0)),
            recall: mean(per_user.iter().filter_map(|u| u.1)),
            dcg: mean(per_user.iter().map(|u| u.2)),
            ndcg: mean(per_user.iter().map(|u| u.3)),
            mse,
            rmse: mse.map(f64::sqrt),
            coverage: metrics::coverage(&just_lists, catalog)?,
            diversity: mean(just_lists.iter().filter_map(|l| audience.diversity(l))),
            novelty: mean(just_lists.iter().filter_map(|l| audience.novelty(l))),
        };
        reports.push(EvalReport {
            variant,
            users: lists.len(),
            rating_pairs: pairs.len(),
            metrics,
            config: config.clone(),
        });
    }
    Ok(EvalSummary { reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record_store::rfc3339;

    fn store_with(user_events: &[(&str, &[(&str, EventKind)])]) -> RecordStore {
        let mut store = RecordStore::new();
        let mut n = 0;
        for (user, events) in user_events {
            for (i, (deck, kind)) in events.iter().enumerate() {
                n += 1;
                let value = (*kind == EventKind::Rating).then_some(3.0);
                store
                    .insert(ActivityEvent {
                        event_id: format!("e{n}"),
                        user_id: user.to_string(),
                        deck_id: deck.to_string(),
                        kind: *kind,
                        value,
                        timestamp: rfc3339::parse("2024-01-01T00:00:00Z").unwrap() + TimeDelta::hours(i as i64),
                    })
                    .unwrap();
            }
        }
        store
    }

    #[test]
    fn holds_out_the_tail() {
        let decks: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let events: Vec<(&str, EventKind)> = decks.iter().map(|d| (d.as_str(), EventKind::Visit)).collect();
        let store = store_with(&[("u", &events), ("single", &[("d0", EventKind::Visit)])]);
        let split = temporal_split(&store, 0.2).unwrap();
        assert_eq!(split.holdout["u"], BTreeSet::from(["d8".to_string(), "d9".to_string()]));
        assert_eq!(split.holdout_events.len(), 2);
        assert!(!split.holdout.contains_key("single"));
        assert_eq!(split.train.events().len(), 9);
    }

    #[test]
    fn known_decks_are_not_relevant() {
        let store = store_with(&[(
            "u",
            &[("a", EventKind::Visit), ("b", EventKind::Visit), ("a", EventKind::Like), ("c", EventKind::Visit)],
        )]);
        let split = temporal_split(&store, 0.5).unwrap();
        assert_eq!(split.holdout["u"], BTreeSet::from(["c".to_string()]));
    }

    #[test]
    fn bad_fraction() {
        let store = RecordStore::new();
        assert!(temporal_split(&store, 0.0).is_err());
        assert!(temporal_split(&store, 1.0).is_err());
    }

    #[test]
    fn train_strictly_precedes_holdout() {
        let data = synthetic::generate_synthetic(&synthetic::SynthParams {
            n_users: 30,
            n_decks: 12,
            n_clusters: 3,
            rng_seed: 3,
            ..Default::default()
        })
        .unwrap();
        let store = data.into_store().unwrap();
        let split = temporal_split(&store, 0.3).unwrap();
        let reference = store.latest_timestamp().unwrap();
        for user in store.user_ids() {
            let train_max = split.train.events_for(user, None, reference).unwrap().last().map(|e| e.timestamp);
            let hold_min = split.holdout_events.iter().filter(|e| e.user_id == user).map(|e| e.timestamp).min();
            if let (Some(a), Some(b)) = (train_max, hold_min) {
                assert!(a < b);
            }
        }
    }

    #[test]
    fn csv_has_a_row_per_variant_and_metric() {
        let data = synthetic::generate_synthetic(&synthetic::SynthParams {
            n_users: 40,
            n_decks: 12,
            n_clusters: 2,
            rng_seed: 5,
            ..Default::default()
        })
        .unwrap();
        let store = data.into_store().unwrap();
        let summary = run_offline_eval(&store, &EvalConfig::default()).unwrap();
        let csv = summary.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 * 9);
        assert!(csv.starts_with("variant,metric,value\n"));
        assert_eq!(summary.to_json(), run_offline_eval(&store, &EvalConfig::default()).unwrap().to_json());
    }
}
