//! Seeded synthetic activity with planted user clusters.

use chrono::{DateTime, TimeDelta, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record_store::{rfc3339, ActivityEvent, DemographicProfile, EventKind, RecordStore, Vocabulary};

const SKILLS: usize = 8;
const LOCATIONS: usize = 5;

fn epoch() -> DateTime<Utc> {
    rfc3339::parse("2024-01-01T00:00:00Z").expect("valid constant")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_users: usize,
    pub n_decks: usize,
    pub n_clusters: usize,
    /// Mean number of events per user.
    pub events_per_user: f64,
    pub rating_fraction: f64,
    pub noise_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_decks: 50,
            n_clusters: 4,
            events_per_user: 15.0,
            rating_fraction: 0.3,
            noise_fraction: 0.1,
            rng_seed: 42,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_decks == 0 || self.n_clusters == 0 {
            return Err(Error::Argument("users, decks and clusters must be positive".into()));
        }
        if self.n_clusters > self.n_users {
            return Err(Error::Argument("more clusters than users".into()));
        }
        if self.n_clusters > self.n_decks {
            return Err(Error::Argument("more clusters than decks".into()));
        }
        for (name, f) in [("rating_fraction", self.rating_fraction), ("noise_fraction", self.noise_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Argument(format!("{name} must be in [0, 1], got {f}")));
            }
        }
        if !(self.events_per_user > 0.0 && self.events_per_user.is_finite()) {
            return Err(Error::Argument("events_per_user must be positive".into()));
        }
        Ok(())
    }
}

/// Generated events and profiles plus the planted ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    /// Events sorted by timestamp.
    pub events: Vec<ActivityEvent>,
    pub profiles: Vec<DemographicProfile>,
    pub vocabulary: Vocabulary,
    /// Cluster of each user, by user id.
    pub user_cluster: Vec<(String, usize)>,
    /// Cluster that prefers each deck, by deck id.
    pub deck_cluster: Vec<(String, usize)>,
}

impl SyntheticData {
    pub fn into_store(self) -> Result<RecordStore> {
        let decks: Vec<String> = self.deck_cluster.into_iter().map(|(d, _)| d).collect();
        let mut store = RecordStore::from_parts(self.events, self.profiles, self.vocabulary)?;
        for d in decks {
            store.register_deck(d);
        }
        Ok(store)
    }

    pub fn cluster_of(&self, user: &str) -> Option<usize> {
        self.user_cluster.iter().find(|(u, _)| u == user).map(|&(_, c)| c)
    }
}

pub fn user_name(i: usize) -> String {
    format!("u{i:05}")
}

pub fn deck_name(i: usize) -> String {
    format!("d{i:04}")
}

fn vocabulary() -> Vocabulary {
    Vocabulary::new((0..SKILLS).map(|i| format!("skill-{i}")), (0..LOCATIONS).map(|i| format!("loc-{i}")))
}

fn random_profile(rng: &mut ChaCha8Rng, user: String) -> DemographicProfile {
    let n_skills = rng.random_range(1..=3);
    let mut skills: Vec<usize> = (0..SKILLS).collect();
    skills.shuffle(rng);
    DemographicProfile {
        user_id: user,
        age: Some(rng.random_range(15..70)),
        skills: skills[..n_skills].iter().map(|i| format!("skill-{i}")).collect(),
        location: Some(format!("loc-{}", rng.random_range(0..LOCATIONS))),
        registered_at: epoch() - TimeDelta::days(rng.random_range(1..365)),
    }
}

/// Orders events by time and assigns sequential event ids.
fn finish(mut events: Vec<ActivityEvent>) -> Vec<ActivityEvent> {
    events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.user_id.cmp(&b.user_id)));
    for (i, e) in events.iter_mut().enumerate() {
        e.event_id = format!("e{:08}", i + 1);
    }
    events
}

/// Users and decks are assigned to clusters round-robin; each cluster
/// prefers its own disjoint deck subset. A `1 − noise_fraction` share of a
/// user's events target the cluster's decks, the rest a uniformly random
/// deck. Cluster decks are rated 4-5, other decks 1-3. Each user's
/// timestamps are strictly increasing.
pub fn generate_synthetic(params: &SynthParams) -> Result<SyntheticData> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let deck_cluster: Vec<(String, usize)> =
        (0..params.n_decks).map(|d| (deck_name(d), d % params.n_clusters)).collect();
    let cluster_decks: Vec<Vec<usize>> =
        (0..params.n_clusters).map(|c| (0..params.n_decks).filter(|d| d % params.n_clusters == c).collect()).collect();
    let poisson = Poisson::new(params.events_per_user).map_err(|e| Error::Argument(e.to_string()))?;
    const KINDS: [(EventKind, f64); 6] = [
        (EventKind::Visit, 0.60),
        (EventKind::Like, 0.15),
        (EventKind::Comment, 0.10),
        (EventKind::Discussion, 0.07),
        (EventKind::Edit, 0.05),
        (EventKind::Create, 0.03),
    ];

    let mut events = Vec::new();
    let mut profiles = Vec::with_capacity(params.n_users);
    let mut user_cluster = Vec::with_capacity(params.n_users);
    for u in 0..params.n_users {
        let user = user_name(u);
        let cluster = u % params.n_clusters;
        user_cluster.push((user.clone(), cluster));
        profiles.push(random_profile(&mut rng, user.clone()));

        let count = (poisson.sample(&mut rng) as usize).max(2);
        let mut t = epoch() + TimeDelta::minutes(rng.random_range(0..60 * 24 * 30));
        for _ in 0..count {
            t += TimeDelta::minutes(rng.random_range(30..60 * 24 * 3));
            let deck = if rng.random::<f64>() < params.noise_fraction {
                rng.random_range(0..params.n_decks)
            } else {
                *cluster_decks[cluster].choose(&mut rng).expect("clusters own at least one deck")
            };
            let preferred = deck % params.n_clusters == cluster;
            let (kind, value) = if rng.random::<f64>() < params.rating_fraction {
                let r = if preferred { rng.random_range(4..=5) } else { rng.random_range(1..=3) };
                (EventKind::Rating, Some(f64::from(r)))
            } else {
                let mut pick = rng.random::<f64>();
                let kind = KINDS
                    .iter()
                    .find(|(_, p)| {
                        pick -= p;
                        pick < 0.0
                    })
                    .map_or(EventKind::Visit, |&(k, _)| k);
                let value = (kind == EventKind::Visit).then(|| f64::from(rng.random_range(10..900)));
                (kind, value)
            };
            events.push(ActivityEvent {
                event_id: String::new(),
                user_id: user.clone(),
                deck_id: deck_name(deck),
                kind,
                value,
                timestamp: t,
            });
        }
    }

    Ok(SyntheticData { events: finish(events), profiles, vocabulary: vocabulary(), user_cluster, deck_cluster })
}

/// Instance where only the rating coordinates separate the clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingSignalParams {
    pub n_users: usize,
    pub n_decks: usize,
    pub n_clusters: usize,
    /// Uniformly random decks each user visits (unrated).
    pub noise_visits: usize,
    /// Own-cluster decks each user rates 5 during training.
    pub cluster_ratings: usize,
    /// Further own-cluster decks visited at the end of the history.
    pub tail_visits: usize,
    pub rng_seed: u64,
}

impl Default for RatingSignalParams {
    fn default() -> Self {
        Self {
            n_users: 60,
            n_decks: 40,
            n_clusters: 4,
            noise_visits: 8,
            cluster_ratings: 4,
            tail_visits: 3,
            rng_seed: 1,
        }
    }
}

/// Each user first visits `noise_visits` random decks and rates
/// `cluster_ratings` of their cluster's decks with a 5, interleaved in random
/// order; the history ends with `tail_visits` visits to cluster decks not
/// touched before. Demographics are random. Association and engagement are
/// dominated by the random visits, so cluster-mates are found reliably only
/// through the rating coordinates. With a holdout fraction of
/// `tail / (noise + ratings + tail)` the tail is exactly the holdout.
pub fn generate_rating_signal(params: &RatingSignalParams) -> Result<SyntheticData> {
    let p = params;
    if p.n_clusters == 0 || p.n_users < p.n_clusters || p.n_decks < p.n_clusters {
        return Err(Error::Argument("need at least one user and one deck per cluster".into()));
    }
    let per_cluster = p.n_decks / p.n_clusters;
    if p.cluster_ratings + p.tail_visits > per_cluster {
        return Err(Error::Argument("cluster_ratings + tail_visits exceeds decks per cluster".into()));
    }
    if p.noise_visits > p.n_decks {
        return Err(Error::Argument("noise_visits exceeds the catalog".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let deck_cluster: Vec<(String, usize)> = (0..p.n_decks).map(|d| (deck_name(d), d % p.n_clusters)).collect();

    let mut events = Vec::new();
    let mut profiles = Vec::new();
    let mut user_cluster = Vec::new();
    for u in 0..p.n_users {
        let user = user_name(u);
        let cluster = u % p.n_clusters;
        user_cluster.push((user.clone(), cluster));
        profiles.push(random_profile(&mut rng, user.clone()));

        let mut own: Vec<usize> = (0..p.n_decks).filter(|d| d % p.n_clusters == cluster).collect();
        own.shuffle(&mut rng);
        let mut all: Vec<usize> = (0..p.n_decks).collect();
        all.shuffle(&mut rng);

        let mut train: Vec<(usize, EventKind, Option<f64>)> = all[..p.noise_visits]
            .iter()
            .map(|&d| (d, EventKind::Visit, Some(60.0)))
            .chain(own[..p.cluster_ratings].iter().map(|&d| (d, EventKind::Rating, Some(5.0))))
            .collect();
        train.shuffle(&mut rng);
        let tail = own[p.cluster_ratings..p.cluster_ratings + p.tail_visits]
            .iter()
            .map(|&d| (d, EventKind::Visit, Some(60.0)));

        let mut t = epoch() + TimeDelta::hours(u as i64);
        for (deck, kind, value) in train.into_iter().chain(tail) {
            t += TimeDelta::minutes(rng.random_range(30..600));
            events.push(ActivityEvent {
                event_id: String::new(),
                user_id: user.clone(),
                deck_id: deck_name(deck),
                kind,
                value,
                timestamp: t,
            });
        }
    }

    Ok(SyntheticData { events: finish(events), profiles, vocabulary: vocabulary(), user_cluster, deck_cluster })
}
