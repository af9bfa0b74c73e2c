//! Append-only store of user activity events and demographic profiles.
//!
//! Events are kept in ingestion order. A per-user index keeps each user's
//! events sorted by timestamp so windowed reads are a suffix scan. The store
//! never looks at the wall clock: every windowed query takes the reference
//! instant from the caller.
//!
//! On disk the store is a JSON-lines log, one event object per line, plus an
//! optional JSON-lines profile file. Loading replays the log in order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, TimeDelta, Utc};
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::Sha256;

use crate::error::{Error, Result};

/// Environment variable holding the anonymization secret.
pub const ANON_KEY_ENV: &str = "CFREC_ANON_KEY";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Visit,
    Create,
    Edit,
    Comment,
    Discussion,
    Search,
    Like,
    Rating,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::Visit,
        EventKind::Create,
        EventKind::Edit,
        EventKind::Comment,
        EventKind::Discussion,
        EventKind::Search,
        EventKind::Like,
        EventKind::Rating,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Visit => "visit",
            EventKind::Create => "create",
            EventKind::Edit => "edit",
            EventKind::Comment => "comment",
            EventKind::Discussion => "discussion",
            EventKind::Search => "search",
            EventKind::Like => "like",
            EventKind::Rating => "rating",
        }
    }

    /// Kinds that count toward the engagement coordinate of a deck.
    pub fn is_engagement(self) -> bool {
        !matches!(self, EventKind::Search | EventKind::Rating)
    }

    /// Kinds that link a user to a deck. Ratings associate too, but carry
    /// no engagement weight.
    pub fn is_association(self) -> bool {
        self != EventKind::Search
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::field("kind", format!("unknown kind `{s}`")))
    }
}

/// Serde adapter writing timestamps as RFC 3339 with a `Z` suffix.
pub(crate) mod rfc3339 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
    }

    pub fn parse(s: &str) -> std::result::Result<DateTime<Utc>, chrono::ParseError> {
        DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc))
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// One timestamped user action on a deck.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub event_id: String,
    pub user_id: String,
    pub deck_id: String,
    pub kind: EventKind,
    pub value: Option<f64>,
    #[serde(with = "rfc3339")]
    pub timestamp: DateTime<Utc>,
}

impl ActivityEvent {
    /// Checks the kind/value invariants.
    pub fn validate(&self) -> Result<()> {
        if self.event_id.is_empty() {
            return Err(Error::field("event_id", "must not be empty"));
        }
        if self.user_id.is_empty() {
            return Err(Error::field("user_id", "must not be empty"));
        }
        if self.deck_id.is_empty() {
            return Err(Error::field("deck_id", "must not be empty"));
        }
        match (self.kind, self.value) {
            (EventKind::Rating, None) => Err(Error::field("value", "rating events require a value")),
            (EventKind::Rating, Some(v)) if !(1.0..=5.0).contains(&v) => {
                Err(Error::field("value", format!("rating out of range: {v} not in [1, 5]")))
            }
            (EventKind::Visit, Some(v)) if !(v >= 0.0 && v.is_finite()) => {
                Err(Error::field("value", format!("visit duration must be >= 0, got {v}")))
            }
            (EventKind::Visit | EventKind::Rating, _) => Ok(()),
            (kind, Some(_)) => Err(Error::field("value", format!("`{kind}` events carry no value"))),
            (_, None) => Ok(()),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization is infallible")
    }
}

/// An event as submitted by a client: raw user id, optional event id.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEvent {
    pub event_id: Option<String>,
    pub user_id: String,
    pub deck_id: String,
    pub kind: EventKind,
    pub value: Option<f64>,
    pub timestamp: DateTime<Utc>,
}

fn required_str<'a>(obj: &'a serde_json::Map<String, Value>, field: &'static str) -> Result<&'a str> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(Error::field(field, "missing")),
        Some(Value::String(s)) if s.is_empty() => Err(Error::field(field, "must not be empty")),
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(Error::field(field, format!("expected a string, got {other}"))),
    }
}

impl RawEvent {
    /// Parses one JSON object, naming the first offending field on failure.
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| Error::Malformed("event must be a JSON object".into()))?;
        let event_id = match obj.get("event_id") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
            Some(_) => return Err(Error::field("event_id", "expected a non-empty string")),
        };
        let user_id = required_str(obj, "user_id")?.to_owned();
        let deck_id = required_str(obj, "deck_id")?.to_owned();
        let kind: EventKind = required_str(obj, "kind")?.parse()?;
        let value = match obj.get("value") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => n.as_f64(),
            Some(other) => return Err(Error::field("value", format!("expected a number or null, got {other}"))),
        };
        let ts = required_str(obj, "timestamp")?;
        let timestamp =
            rfc3339::parse(ts).map_err(|e| Error::field("timestamp", format!("unparseable timestamp `{ts}`: {e}")))?;
        let raw = RawEvent { event_id, user_id, deck_id, kind, value, timestamp };
        // Run the kind/value checks early so errors surface before pseudonymization.
        raw.clone().into_event(String::from("-"), String::from("-")).validate()?;
        Ok(raw)
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(line).map_err(|e| Error::Malformed(e.to_string()))?;
        Self::from_json(&value)
    }

    fn into_event(self, event_id: String, user_id: String) -> ActivityEvent {
        ActivityEvent {
            event_id,
            user_id,
            deck_id: self.deck_id,
            kind: self.kind,
            value: self.value,
            timestamp: self.timestamp,
        }
    }
}

/// Keyed one-way mapping from raw user ids to pseudonyms (HMAC-SHA256).
#[derive(Clone)]
pub struct Pseudonymizer {
    key: Vec<u8>,
}

impl fmt::Debug for Pseudonymizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pseudonymizer").field("key", &"<redacted>").finish()
    }
}

impl Pseudonymizer {
    pub fn new(key: impl Into<Vec<u8>>) -> Result<Self> {
        let key = key.into();
        if key.is_empty() {
            return Err(Error::Config("anonymization key must not be empty".into()));
        }
        Ok(Self { key })
    }

    /// Reads the key from [`ANON_KEY_ENV`].
    pub fn from_env() -> Result<Self> {
        let key = std::env::var(ANON_KEY_ENV).map_err(|_| Error::Config(format!("{ANON_KEY_ENV} is not set")))?;
        Self::new(key)
    }

    pub fn pseudonymize(&self, raw_user_id: &str) -> String {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.key).expect("HMAC accepts keys of any length");
        mac.update(raw_user_id.as_bytes());
        let digest = mac.finalize().into_bytes();
        // 128 bits of the tag; the `p` prefix marks the id as a pseudonym.
        format!("p{}", hex::encode(&digest[..16]))
    }
}

/// Deterministic keyed pseudonym of `raw_user_id`.
pub fn anonymize(raw_user_id: &str, key: &[u8]) -> Result<String> {
    Ok(Pseudonymizer::new(key)?.pseudonymize(raw_user_id))
}

/// Demographic and contextual attributes of one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub user_id: String,
    pub age: Option<u32>,
    pub skills: BTreeSet<String>,
    pub location: Option<String>,
    #[serde(with = "rfc3339")]
    pub registered_at: DateTime<Utc>,
}

/// Declared skill tags and location labels profiles may use.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub skills: BTreeSet<String>,
    pub locations: BTreeSet<String>,
}

impl Vocabulary {
    pub fn new<S, L>(skills: S, locations: L) -> Self
    where
        S: IntoIterator,
        S::Item: Into<String>,
        L: IntoIterator,
        L::Item: Into<String>,
    {
        Self {
            skills: skills.into_iter().map(Into::into).collect(),
            locations: locations.into_iter().map(Into::into).collect(),
        }
    }

    /// Smallest vocabulary admitting every given profile.
    pub fn from_profiles<'a>(profiles: impl IntoIterator<Item = &'a DemographicProfile>) -> Self {
        let mut vocab = Vocabulary::default();
        for p in profiles {
            vocab.skills.extend(p.skills.iter().cloned());
            vocab.locations.extend(p.location.iter().cloned());
        }
        vocab
    }
}

impl DemographicProfile {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.user_id.is_empty() {
            return Err(Error::field("user_id", "must not be empty"));
        }
        if let Some(age) = self.age {
            if age == 0 || age >= 150 {
                return Err(Error::field("age", format!("age {age} outside (0, 150)")));
            }
        }
        if let Some(skill) = self.skills.iter().find(|s| !vocab.skills.contains(*s)) {
            return Err(Error::field("skills", format!("`{skill}` is not in the skill vocabulary")));
        }
        if let Some(loc) = self.location.as_ref().filter(|l| !vocab.locations.contains(*l)) {
            return Err(Error::field("location", format!("`{loc}` is not in the location vocabulary")));
        }
        Ok(())
    }
}

/// The user activity record store.
#[derive(Clone, Debug, Default)]
pub struct RecordStore {
    events: Vec<ActivityEvent>,
    event_ids: HashSet<String>,
    /// Per-user event positions, ascending by timestamp, ties by ingestion order.
    by_user: BTreeMap<String, Vec<usize>>,
    catalog: BTreeSet<String>,
    profiles: BTreeMap<String, DemographicProfile>,
    vocabulary: Vocabulary,
}

impl RecordStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vocabulary(vocabulary: Vocabulary) -> Self {
        Self { vocabulary, ..Self::default() }
    }

    /// Builds a store from already-pseudonymized events and profiles.
    pub fn from_parts(
        events: impl IntoIterator<Item = ActivityEvent>,
        profiles: impl IntoIterator<Item = DemographicProfile>,
        vocabulary: Vocabulary,
    ) -> Result<Self> {
        let mut store = Self::with_vocabulary(vocabulary);
        for e in events {
            store.insert(e)?;
        }
        for p in profiles {
            store.insert_profile(p)?;
        }
        Ok(store)
    }

    /// Validates, pseudonymizes and appends a raw event. Returns the event id.
    pub fn ingest_event(&mut self, raw: RawEvent, pseudonymizer: &Pseudonymizer) -> Result<String> {
        let event_id = match &raw.event_id {
            Some(id) => id.clone(),
            None => self.next_event_id(),
        };
        let user_id = pseudonymizer.pseudonymize(&raw.user_id);
        let event = raw.into_event(event_id.clone(), user_id);
        self.insert(event)?;
        Ok(event_id)
    }

    fn next_event_id(&self) -> String {
        let mut n = self.events.len() + 1;
        loop {
            let id = format!("e{n:08}");
            if !self.event_ids.contains(&id) {
                return id;
            }
            n += 1;
        }
    }

    /// Appends an event whose user id is already a pseudonym.
    pub fn insert(&mut self, event: ActivityEvent) -> Result<()> {
        event.validate()?;
        if self.event_ids.contains(&event.event_id) {
            return Err(Error::DuplicateEvent(event.event_id));
        }
        let pos = self.events.len();
        let slots = self.by_user.entry(event.user_id.clone()).or_default();
        let at = slots.partition_point(|&i| self.events[i].timestamp <= event.timestamp);
        slots.insert(at, pos);
        self.catalog.insert(event.deck_id.clone());
        self.event_ids.insert(event.event_id.clone());
        self.events.push(event);
        Ok(())
    }

    pub fn ingest_profile(&mut self, mut profile: DemographicProfile, pseudonymizer: &Pseudonymizer) -> Result<()> {
        profile.user_id = pseudonymizer.pseudonymize(&profile.user_id);
        self.insert_profile(profile)
    }

    /// Inserts or replaces a profile keyed by its (pseudonymous) user id.
    pub fn insert_profile(&mut self, profile: DemographicProfile) -> Result<()> {
        profile.validate(&self.vocabulary)?;
        self.profiles.insert(profile.user_id.clone(), profile);
        Ok(())
    }

    /// Registers a deck without any activity.
    pub fn register_deck(&mut self, deck_id: impl Into<String>) {
        self.catalog.insert(deck_id.into());
    }

    /// All events in ingestion order.
    pub fn events(&self) -> &[ActivityEvent] {
        &self.events
    }

    pub fn catalog(&self) -> &BTreeSet<String> {
        &self.catalog
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn profiles(&self) -> impl Iterator<Item = &DemographicProfile> {
        self.profiles.values()
    }

    pub fn profile(&self, user_id: &str) -> Option<&DemographicProfile> {
        self.profiles.get(user_id)
    }

    /// Users with at least one event, ascending.
    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.by_user.keys().map(String::as_str)
    }

    pub fn user_count(&self) -> usize {
        self.by_user.len()
    }

    pub fn contains_user(&self, user_id: &str) -> bool {
        self.by_user.contains_key(user_id)
    }

    /// Events of `user_id` with `timestamp >= reference - window`, ascending.
    /// Without a window the full history is returned.
    pub fn events_for(
        &self,
        user_id: &str,
        window: Option<TimeDelta>,
        reference: DateTime<Utc>,
    ) -> Result<Vec<&ActivityEvent>> {
        let start = match window {
            Some(w) if w < TimeDelta::zero() => {
                return Err(Error::Argument(format!("window must be non-negative, got {w}")))
            }
            Some(w) => Some(reference - w),
            None => None,
        };
        let Some(slots) = self.by_user.get(user_id) else {
            return Ok(Vec::new());
        };
        let from = match start {
            Some(start) => slots.partition_point(|&i| self.events[i].timestamp < start),
            None => 0,
        };
        Ok(slots[from..].iter().map(|&i| &self.events[i]).collect())
    }

    /// Number of association events (anything but search) of a user.
    pub fn association_event_count(&self, user_id: &str) -> usize {
        self.by_user
            .get(user_id)
            .map(|slots| slots.iter().filter(|&&i| self.events[i].kind.is_association()).count())
            .unwrap_or(0)
    }

    /// Users worth prompting for explicit ratings: at least one association
    /// event but fewer than `min_ratings` ratings. Fewest ratings first.
    pub fn rating_prompt_candidates(&self, min_ratings: usize) -> Vec<String> {
        let mut out: Vec<(usize, &String)> = self
            .by_user
            .iter()
            .filter_map(|(user, slots)| {
                let evs = slots.iter().map(|&i| &self.events[i]);
                let assoc = evs.clone().filter(|e| e.kind.is_association()).count();
                let ratings = evs.filter(|e| e.kind == EventKind::Rating).count();
                (assoc >= 1 && ratings < min_ratings).then_some((ratings, user))
            })
            .collect();
        out.sort();
        out.into_iter().map(|(_, u)| u.clone()).collect()
    }

    /// Latest rating of a user on a deck.
    pub fn latest_rating(&self, user_id: &str, deck_id: &str) -> Option<f64> {
        let slots = self.by_user.get(user_id)?;
        slots
            .iter()
            .rev()
            .map(|&i| &self.events[i])
            .find(|e| e.kind == EventKind::Rating && e.deck_id == deck_id)
            .and_then(|e| e.value)
    }

    /// Latest rating of every user who rated `deck_id`.
    pub fn latest_ratings_for_deck(&self, deck_id: &str) -> BTreeMap<&str, f64> {
        let mut out: BTreeMap<&str, (DateTime<Utc>, usize, f64)> = BTreeMap::new();
        for (i, e) in self.events.iter().enumerate() {
            if e.kind != EventKind::Rating || e.deck_id != deck_id {
                continue;
            }
            let Some(v) = e.value else { continue };
            let slot = out.entry(e.user_id.as_str()).or_insert((e.timestamp, i, v));
            if (e.timestamp, i) >= (slot.0, slot.1) {
                *slot = (e.timestamp, i, v);
            }
        }
        out.into_iter().map(|(u, (_, _, v))| (u, v)).collect()
    }

    /// Latest timestamp in the store.
    pub fn latest_timestamp(&self) -> Option<DateTime<Utc>> {
        self.events.iter().map(|e| e.timestamp).max()
    }

    /// A new store holding the events accepted by `keep`, with the same
    /// profiles, vocabulary and catalog.
    pub fn filtered(&self, mut keep: impl FnMut(&ActivityEvent) -> bool) -> RecordStore {
        let mut out = RecordStore::with_vocabulary(self.vocabulary.clone());
        for e in self.events.iter().filter(|e| keep(e)) {
            out.insert(e.clone()).expect("events of a valid store stay valid");
        }
        out.catalog.extend(self.catalog.iter().cloned());
        out.profiles = self.profiles.clone();
        out
    }

    // ----- persistence -----

    /// Writes the whole event log as JSON lines.
    pub fn write_events<W: Write>(&self, w: W) -> Result<()> {
        write_lines(w, self.events.iter().map(ActivityEvent::to_json_line))
    }

    pub fn write_profiles<W: Write>(&self, w: W) -> Result<()> {
        write_lines(
            w,
            self.profiles.values().map(|p| serde_json::to_string(p).expect("profile serialization is infallible")),
        )
    }

    pub fn save(&self, events_path: &Path, profiles_path: Option<&Path>) -> Result<()> {
        self.write_events(File::create(events_path)?)?;
        if let Some(p) = profiles_path {
            self.write_profiles(File::create(p)?)?;
        }
        Ok(())
    }

    /// Replays an event log (and optional profile file). Without a declared
    /// vocabulary, the vocabulary is inferred from the profiles.
    pub fn load(events_path: &Path, profiles_path: Option<&Path>, vocabulary: Option<Vocabulary>) -> Result<Self> {
        let events = read_events(events_path)?;
        let profiles = match profiles_path {
            Some(p) => read_profiles(p)?,
            None => Vec::new(),
        };
        let vocabulary = vocabulary.unwrap_or_else(|| Vocabulary::from_profiles(&profiles));
        Self::from_parts(events, profiles, vocabulary)
    }
}

fn write_lines<W: Write>(w: W, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(w);
    for line in lines {
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item =
            serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_events(path: &Path) -> Result<Vec<ActivityEvent>> {
    read_jsonl(path)
}

pub fn read_profiles(path: &Path) -> Result<Vec<DemographicProfile>> {
    read_jsonl(path)
}

/// Reads client-submitted events, validating each line.
pub fn read_raw_events(path: &Path) -> Result<Vec<RawEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw = RawEvent::parse_line(&line).map_err(|e| Error::Malformed(format!("line {}: {e}", n + 1)))?;
        out.push(raw);
    }
    Ok(out)
}

/// Appends events to a log file, creating it when absent.
pub fn append_events(path: &Path, events: &[ActivityEvent]) -> Result<()> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    write_lines(file, events.iter().map(ActivityEvent::to_json_line))
}
