//! User feature vectors and per-coordinate weights.
//!
//! Coordinates are laid out group by group:
//!
//! ```text
//! [association x D][engagement x D][rating x D][age bucket x 5][skills x S][location x L]
//! ```
//!
//! where `D` is the number of decks in lexicographic order. Every coordinate
//! lies in `[0, 1]`; association, age, skill and location coordinates are
//! binary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record_store::{ActivityEvent, DemographicProfile, EventKind};

/// Engagement saturates at this many events on one deck.
pub const ENGAGEMENT_CAP: f64 = 100.0;

/// Upper bounds (inclusive) of the first four age buckets; the fifth is `> 50`.
const AGE_BUCKET_UPPER: [u32; 4] = [17, 25, 35, 50];
pub const AGE_BUCKETS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Association,
    Engagement,
    Rating,
    Age,
    Skills,
    Location,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 6] = [
        FeatureGroup::Association,
        FeatureGroup::Engagement,
        FeatureGroup::Rating,
        FeatureGroup::Age,
        FeatureGroup::Skills,
        FeatureGroup::Location,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Association => "association",
            FeatureGroup::Engagement => "engagement",
            FeatureGroup::Rating => "rating",
            FeatureGroup::Age => "age",
            FeatureGroup::Skills => "skills",
            FeatureGroup::Location => "location",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Weight of each coordinate group. Serialized as the weight-file object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupWeights {
    pub association: f64,
    pub engagement: f64,
    pub rating: f64,
    pub age: f64,
    pub skills: f64,
    pub location: f64,
}

impl Default for GroupWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl GroupWeights {
    pub fn uniform(w: f64) -> Self {
        Self::from_genes([w; 6])
    }

    /// Builds weights from genes ordered as [`FeatureGroup::ALL`].
    pub fn from_genes(g: [f64; 6]) -> Self {
        Self { association: g[0], engagement: g[1], rating: g[2], age: g[3], skills: g[4], location: g[5] }
    }

    pub fn genes(&self) -> [f64; 6] {
        [self.association, self.engagement, self.rating, self.age, self.skills, self.location]
    }

    pub fn get(&self, group: FeatureGroup) -> f64 {
        self.genes()[group as usize]
    }

    pub fn validate(&self) -> Result<()> {
        for group in FeatureGroup::ALL {
            let w = self.get(group);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("weight `{group}` must be a non-negative number, got {w}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_genes(self.genes().map(|g| g * c))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: GroupWeights = serde_json::from_str(s).map_err(|e| Error::Config(format!("weight file: {e}")))?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Coordinate layout of the feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    decks: Vec<String>,
    deck_pos: HashMap<String, usize>,
    skills: Vec<String>,
    skill_pos: HashMap<String, usize>,
    locations: Vec<String>,
    location_pos: HashMap<String, usize>,
}

fn positions(items: &[String]) -> HashMap<String, usize> {
    items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

/// Builds the schema. Decks, skills and locations are sorted and deduplicated.
pub fn build_schema<D, S, L>(catalog: D, skills_vocab: S, location_vocab: L) -> Result<FeatureSchema>
where
    D: IntoIterator,
    D::Item: AsRef<str>,
    S: IntoIterator,
    S::Item: AsRef<str>,
    L: IntoIterator,
    L::Item: AsRef<str>,
{
    fn sorted<I: IntoIterator>(it: I) -> Vec<String>
    where
        I::Item: AsRef<str>,
    {
        it.into_iter().map(|s| s.as_ref().to_owned()).collect::<BTreeSet<_>>().into_iter().collect()
    }
    let decks = sorted(catalog);
    if decks.is_empty() {
        return Err(Error::Argument("cannot build a feature space over an empty catalog".into()));
    }
    let skills = sorted(skills_vocab);
    let locations = sorted(location_vocab);
    Ok(FeatureSchema {
        deck_pos: positions(&decks),
        skill_pos: positions(&skills),
        location_pos: positions(&locations),
        decks,
        skills,
        locations,
    })
}

impl FeatureSchema {
    /// Schema over a store's catalog and vocabulary.
    pub fn for_store(store: &crate::record_store::RecordStore) -> Result<Self> {
        let vocab = store.vocabulary();
        build_schema(store.catalog(), &vocab.skills, &vocab.locations)
    }

    pub fn decks(&self) -> &[String] {
        &self.decks
    }

    pub fn deck_count(&self) -> usize {
        self.decks.len()
    }

    /// Total coordinate count `m`.
    pub fn dim(&self) -> usize {
        3 * self.decks.len() + AGE_BUCKETS + self.skills.len() + self.locations.len()
    }

    /// Half-open coordinate range of a group.
    pub fn range(&self, group: FeatureGroup) -> std::ops::Range<usize> {
        let d = self.decks.len();
        let age = 3 * d;
        let skills = age + AGE_BUCKETS;
        let loc = skills + self.skills.len();
        match group {
            FeatureGroup::Association => 0..d,
            FeatureGroup::Engagement => d..2 * d,
            FeatureGroup::Rating => 2 * d..3 * d,
            FeatureGroup::Age => age..skills,
            FeatureGroup::Skills => skills..loc,
            FeatureGroup::Location => loc..loc + self.locations.len(),
        }
    }

    pub fn group_of(&self, coord: usize) -> Option<FeatureGroup> {
        FeatureGroup::ALL.into_iter().find(|g| self.range(*g).contains(&coord))
    }

    pub fn deck_index(&self, deck_id: &str) -> Option<usize> {
        self.deck_pos.get(deck_id).copied()
    }

    /// Coordinate index of a per-deck group (association, engagement or rating).
    pub fn deck_coord(&self, group: FeatureGroup, deck_id: &str) -> Option<usize> {
        let i = self.deck_index(deck_id)?;
        match group {
            FeatureGroup::Association | FeatureGroup::Engagement | FeatureGroup::Rating => {
                Some(self.range(group).start + i)
            }
            _ => None,
        }
    }

    /// Whether the coordinate only ever takes the values 0 and 1.
    pub fn is_binary(&self, coord: usize) -> bool {
        !matches!(self.group_of(coord), Some(FeatureGroup::Engagement | FeatureGroup::Rating))
    }
}

/// A user as a point in the feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub user_id: String,
    pub coords: Vec<f64>,
    /// Decks whose association coordinate is 1.
    pub association_set: BTreeSet<String>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Maps a 1-5 rating onto `[0, 1]`.
pub fn normalize_rating(r: f64) -> Result<f64> {
    if !(1.0..=5.0).contains(&r) {
        return Err(Error::Argument(format!("rating {r} outside [1, 5]")));
    }
    Ok((r - 1.0) / 4.0)
}

/// `min(1, ln(1 + count) / ln(1 + cap))`.
pub fn engagement_score(count: usize) -> f64 {
    ((1.0 + count as f64).ln() / (1.0 + ENGAGEMENT_CAP).ln()).min(1.0)
}

pub fn age_bucket(age: u32) -> usize {
    AGE_BUCKET_UPPER.iter().position(|&upper| age <= upper).unwrap_or(AGE_BUCKETS - 1)
}

/// Vectorizes one user's events and optional profile.
///
/// Every event must belong to `user_id` and target a deck of the schema.
/// Ratings use the latest rating per deck (timestamp, then input order).
pub fn vectorize<'a, I>(
    user_id: &str,
    events: I,
    profile: Option<&DemographicProfile>,
    schema: &FeatureSchema,
) -> Result<FeatureVector>
where
    I: IntoIterator<Item = &'a ActivityEvent>,
{
    let d = schema.deck_count();
    let mut engagement = vec![0usize; d];
    let mut associated = vec![false; d];
    let mut latest: HashMap<usize, (DateTime<Utc>, f64)> = HashMap::new();

    for e in events {
        if e.user_id != user_id {
            return Err(Error::Argument(format!("event `{}` belongs to `{}`, not `{user_id}`", e.event_id, e.user_id)));
        }
        let deck = schema.deck_index(&e.deck_id).ok_or_else(|| Error::StaleSchema(e.deck_id.clone()))?;
        if e.kind.is_engagement() {
            engagement[deck] += 1;
        }
        if e.kind.is_association() {
            associated[deck] = true;
        }
        if let (EventKind::Rating, Some(r)) = (e.kind, e.value) {
            let slot = latest.entry(deck).or_insert((e.timestamp, r));
            if e.timestamp >= slot.0 {
                *slot = (e.timestamp, r);
            }
        }
    }

    let mut coords = vec![0.0; schema.dim()];
    let mut association_set = BTreeSet::new();
    let (ea, ee, er) = (
        schema.range(FeatureGroup::Association).start,
        schema.range(FeatureGroup::Engagement).start,
        schema.range(FeatureGroup::Rating).start,
    );
    for deck in 0..d {
        if associated[deck] {
            coords[ea + deck] = 1.0;
            association_set.insert(schema.decks[deck].clone());
        }
        coords[ee + deck] = engagement_score(engagement[deck]);
    }
    for (deck, (_, r)) in latest {
        coords[er + deck] = normalize_rating(r)?;
    }

    if let Some(p) = profile {
        if let Some(age) = p.age {
            coords[schema.range(FeatureGroup::Age).start + age_bucket(age)] = 1.0;
        }
        let skills = schema.range(FeatureGroup::Skills).start;
        for s in &p.skills {
            if let Some(&i) = schema.skill_pos.get(s) {
                coords[skills + i] = 1.0;
            }
        }
        if let Some(&i) = p.location.as_ref().and_then(|l| schema.location_pos.get(l)) {
            coords[schema.range(FeatureGroup::Location).start + i] = 1.0;
        }
    }

    Ok(FeatureVector { user_id: user_id.to_owned(), coords, association_set })
}

/// Expands group weights to one weight per coordinate.
pub fn expand_weights(weights: &GroupWeights, schema: &FeatureSchema) -> Result<Vec<f64>> {
    weights.validate()?;
    let mut out = vec![0.0; schema.dim()];
    for group in FeatureGroup::ALL {
        out[schema.range(group)].fill(weights.get(group));
    }
    Ok(out)
}

/// Parses group weights from a name → value map; every group must be present.
pub fn group_weights_from_map(map: &BTreeMap<String, f64>) -> Result<GroupWeights> {
    let mut genes = [0.0; 6];
    for (i, group) in FeatureGroup::ALL.into_iter().enumerate() {
        genes[i] = *map.get(group.name()).ok_or_else(|| Error::Config(format!("missing weight group `{group}`")))?;
    }
    if let Some(extra) = map.keys().find(|k| !FeatureGroup::ALL.iter().any(|g| g.name() == k.as_str())) {
        return Err(Error::Config(format!("unknown weight group `{extra}`")));
    }
    let w = GroupWeights::from_genes(genes);
    w.validate()?;
    Ok(w)
}
