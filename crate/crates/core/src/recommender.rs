//! Top-n deck recommendation: neighbor cross-matching, popularity scoring,
//! hybrid blending, rating prediction and the cold-start switch.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_space::GroupWeights;
use crate::knn_engine::{Neighbor, ProfileIndex, SearchParams};
use crate::record_store::{EventKind, RecordStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Cf,
    Popularity,
    Hybrid,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Cf => "cf",
            Source::Popularity => "popularity",
            Source::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub deck_id: String,
    pub score: f64,
    pub source: Source,
    #[serde(skip)]
    pub cold_start: bool,
}

/// The JSON body returned for one user's recommendations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResponse {
    pub user_id: String,
    pub cold_start: bool,
    pub items: Vec<Recommendation>,
}

/// Time span over which popularity is counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopularityWindow {
    #[default]
    All,
    Month,
    Week,
}

impl PopularityWindow {
    pub fn duration(self) -> Option<TimeDelta> {
        match self {
            PopularityWindow::All => None,
            PopularityWindow::Month => Some(TimeDelta::days(30)),
            PopularityWindow::Week => Some(TimeDelta::days(7)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PopularityWindow::All => "all",
            PopularityWindow::Month => "month",
            PopularityWindow::Week => "week",
        }
    }
}

impl FromStr for PopularityWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(PopularityWindow::All),
            "month" => Ok(PopularityWindow::Month),
            "week" => Ok(PopularityWindow::Week),
            other => Err(Error::Argument(format!("window must be all, month or week, got `{other}`"))),
        }
    }
}

/// Coefficients of the popularity score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityWeights {
    pub visits: f64,
    pub edits: f64,
    pub comments: f64,
    pub likes: f64,
    /// Multiplies the average rating rescaled to `[0, 1]`.
    pub rating: f64,
}

impl Default for PopularityWeights {
    fn default() -> Self {
        Self { visits: 1.0, edits: 2.0, comments: 2.0, likes: 3.0, rating: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityStats {
    pub deck_id: String,
    pub visits: u64,
    pub edits: u64,
    pub comments: u64,
    pub likes: u64,
    pub avg_rating: Option<f64>,
    pub raw_score: f64,
    pub window: PopularityWindow,
}

/// Popularity of every catalog deck within `window` (measured back from
/// `reference`), highest score first, ties by deck id.
///
/// Creations count as edits and discussion posts as comments.
pub fn popularity(
    store: &RecordStore,
    window: PopularityWindow,
    reference: DateTime<Utc>,
    weights: &PopularityWeights,
) -> Vec<PopularityStats> {
    #[derive(Default)]
    struct Acc {
        visits: u64,
        edits: u64,
        comments: u64,
        likes: u64,
        rating_sum: f64,
        ratings: u64,
    }
    let start = window.duration().map(|w| reference - w);
    let mut acc: BTreeMap<&str, Acc> = store.catalog().iter().map(|d| (d.as_str(), Acc::default())).collect();
    for e in store.events() {
        if start.is_some_and(|s| e.timestamp < s) {
            continue;
        }
        let a = acc.entry(e.deck_id.as_str()).or_default();
        match e.kind {
            EventKind::Visit => a.visits += 1,
            EventKind::Edit | EventKind::Create => a.edits += 1,
            EventKind::Comment | EventKind::Discussion => a.comments += 1,
            EventKind::Like => a.likes += 1,
            EventKind::Rating => {
                if let Some(v) = e.value {
                    a.rating_sum += v;
                    a.ratings += 1;
                }
            }
            EventKind::Search => {}
        }
    }
    let mut out: Vec<PopularityStats> = acc
        .into_iter()
        .map(|(deck, a)| {
            let avg_rating = (a.ratings > 0).then(|| a.rating_sum / a.ratings as f64);
            let raw_score = weights.visits * a.visits as f64
                + weights.edits * a.edits as f64
                + weights.comments * a.comments as f64
                + weights.likes * a.likes as f64
                + weights.rating * avg_rating.map_or(0.0, |r| (r - 1.0) / 4.0);
            PopularityStats {
                deck_id: deck.to_owned(),
                visits: a.visits,
                edits: a.edits,
                comments: a.comments,
                likes: a.likes,
                avg_rating,
                raw_score,
                window,
            }
        })
        .collect();
    out.sort_by(|a, b| b.raw_score.total_cmp(&a.raw_score).then_with(|| a.deck_id.cmp(&b.deck_id)));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Sufficient,
    Cold,
}

/// `Cold` when the user has fewer than `min_events` association events.
pub fn cold_start_gate(store: &RecordStore, target: &str, min_events: usize) -> Gate {
    if store.association_event_count(target) < min_events {
        Gate::Cold
    } else {
        Gate::Sufficient
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    /// Share of the CF score in the blend.
    pub alpha: f64,
    pub k: usize,
    pub n: usize,
    pub cold_start_min_events: usize,
    /// Only activity this recent feeds the feature vectors.
    #[serde(skip)]
    pub window: Option<TimeDelta>,
    pub popularity_window: PopularityWindow,
    /// Partitions used by the neighbor search; 1 means a serial scan.
    pub partitions: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            k: 10,
            n: 5,
            cold_start_min_events: 5,
            window: None,
            popularity_window: PopularityWindow::All,
            partitions: 1,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Argument(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.k == 0 || self.n == 0 {
            return Err(Error::Argument("k and n must be at least 1".into()));
        }
        if self.partitions == 0 {
            return Err(Error::Argument("partitions must be at least 1".into()));
        }
        if self.window.is_some_and(|w| w < TimeDelta::zero()) {
            return Err(Error::Argument("window must be non-negative".into()));
        }
        Ok(())
    }
}

fn by_score_then_deck(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Min-max normalization; all-equal inputs map to 0.
fn min_max(values: &HashMap<&str, f64>) -> HashMap<String, f64> {
    let lo = values.values().copied().fold(f64::INFINITY, f64::min);
    let hi = values.values().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|(&d, &v)| {
            let norm = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            (d.to_owned(), norm)
        })
        .collect()
}

/// Read-side recommendation over one index snapshot and its store.
///
/// `reference` anchors the popularity windows.
#[derive(Clone, Debug)]
pub struct Recommender<'a> {
    index: &'a ProfileIndex,
    store: &'a RecordStore,
    weights: GroupWeights,
    popularity_weights: PopularityWeights,
    reference: DateTime<Utc>,
}

impl<'a> Recommender<'a> {
    pub fn new(
        index: &'a ProfileIndex,
        store: &'a RecordStore,
        weights: GroupWeights,
        reference: DateTime<Utc>,
    ) -> Self {
        Self { index, store, weights, popularity_weights: PopularityWeights::default(), reference }
    }

    pub fn with_popularity_weights(mut self, weights: PopularityWeights) -> Self {
        self.popularity_weights = weights;
        self
    }

    pub fn index(&self) -> &ProfileIndex {
        self.index
    }

    pub fn weights(&self) -> &GroupWeights {
        &self.weights
    }

    /// Decks the target is already associated with: the index vector's
    /// association set plus anything in the store's history.
    pub fn associated(&self, target: &str) -> BTreeSet<String> {
        let mut out = self.index.get(target).map(|v| v.association_set.clone()).unwrap_or_default();
        if let Ok(events) = self.store.events_for(target, None, self.reference) {
            out.extend(events.iter().filter(|e| e.kind.is_association()).map(|e| e.deck_id.clone()));
        }
        out
    }

    pub fn neighbors(&self, target: &str, k: usize, partitions: usize) -> Result<Vec<Neighbor>> {
        let params = SearchParams::new(k, self.weights).with_partitions(partitions);
        if partitions == 1 {
            self.index.k_nearest(target, &params)
        } else {
            self.index.k_nearest_partitioned(target, &params)
        }
    }

    /// Every cross-matched candidate with its normalized similarity mass.
    pub fn cf_scores(&self, target: &str, k: usize, partitions: usize) -> Result<Vec<(String, f64)>> {
        let neighbors = self.neighbors(target, k, partitions)?;
        let excluded = self.associated(target);
        let total: f64 = neighbors.iter().map(|n| n.similarity).sum();
        let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
        for n in &neighbors {
            let v = self.index.get(&n.user_id).expect("neighbors come from the index");
            for deck in v.association_set.iter().filter(|d| !excluded.contains(*d)) {
                *mass.entry(deck.as_str()).or_insert(0.0) += n.similarity;
            }
        }
        let mut scored: Vec<(String, f64)> =
            mass.into_iter().map(|(d, m)| (d.to_owned(), (m / total).min(1.0))).collect();
        scored.sort_by(by_score_then_deck);
        Ok(scored)
    }

    /// Top-n decks associated with the k nearest neighbors but not the target.
    pub fn cf_recommend(&self, target: &str, k: usize, n: usize) -> Result<Vec<Recommendation>> {
        let mut scored = self.cf_scores(target, k, 1)?;
        scored.truncate(n);
        Ok(scored
            .into_iter()
            .map(|(deck_id, score)| Recommendation { deck_id, score, source: Source::Cf, cold_start: false })
            .collect())
    }

    pub fn popularity(&self, window: PopularityWindow) -> Vec<PopularityStats> {
        popularity(self.store, window, self.reference, &self.popularity_weights)
    }

    /// Most popular decks the target is not associated with; scores are
    /// min-max normalized over all such decks.
    pub fn popular_for(
        &self,
        target: &str,
        window: PopularityWindow,
        n: usize,
        cold_start: bool,
    ) -> Vec<Recommendation> {
        let excluded = self.associated(target);
        let ranked: Vec<PopularityStats> =
            self.popularity(window).into_iter().filter(|s| !excluded.contains(&s.deck_id)).collect();
        let raw: HashMap<&str, f64> = ranked.iter().map(|s| (s.deck_id.as_str(), s.raw_score)).collect();
        let norm = min_max(&raw);
        ranked
            .iter()
            .take(n)
            .map(|s| Recommendation {
                deck_id: s.deck_id.clone(),
                score: norm[&s.deck_id],
                source: Source::Popularity,
                cold_start,
            })
            .collect()
    }

    /// Candidate set with both component scores, before ranking.
    ///
    /// Candidates are every CF candidate plus the `2n` most popular decks,
    /// minus the target's associations. Returns `(deck, cf, pop_norm)`.
    pub fn hybrid_components(&self, target: &str, config: &HybridConfig) -> Result<Vec<(String, f64, f64)>> {
        config.validate()?;
        let cf: HashMap<String, f64> = self.cf_scores(target, config.k, config.partitions)?.into_iter().collect();
        let excluded = self.associated(target);
        let pop = self.popularity(config.popularity_window);
        let raw_of: HashMap<&str, f64> = pop.iter().map(|s| (s.deck_id.as_str(), s.raw_score)).collect();

        let mut candidates: BTreeSet<&str> = cf.keys().map(String::as_str).collect();
        candidates.extend(pop.iter().take(2 * config.n).map(|s| s.deck_id.as_str()));
        candidates.retain(|d| !excluded.contains(*d));

        let raw: HashMap<&str, f64> = candidates.iter().map(|&d| (d, raw_of.get(d).copied().unwrap_or(0.0))).collect();
        let norm = min_max(&raw);
        Ok(candidates.into_iter().map(|d| (d.to_owned(), cf.get(d).copied().unwrap_or(0.0), norm[d])).collect())
    }

    /// Blends CF and popularity over the shared candidate set.
    pub fn hybrid_recommend(&self, target: &str, config: &HybridConfig) -> Result<Vec<Recommendation>> {
        let alpha = config.alpha;
        let mut scored: Vec<(String, f64)> = self
            .hybrid_components(target, config)?
            .into_iter()
            .map(|(d, cf, pop)| (d, (alpha * cf + (1.0 - alpha) * pop).clamp(0.0, 1.0)))
            .collect();
        scored.sort_by(by_score_then_deck);
        scored.truncate(config.n);
        Ok(scored
            .into_iter()
            .map(|(deck_id, score)| Recommendation { deck_id, score, source: Source::Hybrid, cold_start: false })
            .collect())
    }

    /// Full pipeline: popularity fallback for cold users, hybrid otherwise.
    pub fn recommend(&self, target: &str, config: &HybridConfig) -> Result<RecommendationResponse> {
        config.validate()?;
        let cold = cold_start_gate(self.store, target, config.cold_start_min_events) == Gate::Cold;
        let items = if cold {
            self.popular_for(target, config.popularity_window, config.n, true)
        } else {
            self.hybrid_recommend(target, config)?
        };
        Ok(RecommendationResponse { user_id: target.to_owned(), cold_start: cold, items })
    }

    /// Similarity-weighted mean rating of the k nearest neighbors who rated
    /// `deck_id` (their latest rating, 1-5 scale).
    pub fn predict_rating(&self, target: &str, deck_id: &str, k: usize) -> Result<f64> {
        let raters = self.store.latest_ratings_for_deck(deck_id);
        let neighbors = self.index.search(target, k, &self.weights, |v| raters.contains_key(v.user_id.as_str()))?;
        if neighbors.is_empty() {
            return Err(Error::NoPrediction { user: target.to_owned(), deck: deck_id.to_owned() });
        }
        let (num, den) = neighbors
            .iter()
            .fold((0.0, 0.0), |(num, den), n| (num + n.similarity * raters[n.user_id.as_str()], den + n.similarity));
        Ok((num / den).clamp(1.0, 5.0))
    }
}
