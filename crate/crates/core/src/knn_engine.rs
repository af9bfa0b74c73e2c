//! Exact weighted-L1 nearest-neighbor search over user feature vectors.
//!
//! Search is a single linear pass with a bounded max-heap of size `k`.
//! The index evaluates the weighted L1 sum group by group: the unweighted
//! differences inside a group are summed exactly, then scaled by the group
//! weight.
//! Candidates are ordered by `(distance, user id)`, so the result is fully
//! determined by the index and the weights. The partitioned variant shards
//! users by a stable hash of their id, searches the shards on the rayon pool
//! and merges the local heaps with the same ordering, which makes its output
//! identical to the serial scan.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::ops::Range;
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_space::{vectorize, FeatureGroup, FeatureSchema, FeatureVector, GroupWeights};
use crate::record_store::RecordStore;

/// `Σ w_i |u_i − v_i|`, checked for equal lengths.
pub fn distance(u: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch { expected: u.len(), actual: v.len() });
    }
    if w.len() != u.len() {
        return Err(Error::LengthMismatch { expected: u.len(), actual: w.len() });
    }
    Ok(weighted_l1(u, v, w))
}

#[inline]
fn weighted_l1(u: &[f64], v: &[f64], w: &[f64]) -> f64 {
    u.iter().zip(v).zip(w).map(|((a, b), w)| w * (a - b).abs()).sum()
}

/// Fixed-point scale for exact per-group sums: coordinates live in `[0, 1]`,
/// so every difference fits in a `u64` after scaling, and all values the
/// vectorizer produces are exact multiples of `2^-63`.
const FIXED_SCALE: f64 = 9_223_372_036_854_775_808.0; // 2^63

fn exact_l1(u: &[f64], v: &[f64]) -> u128 {
    u.iter().zip(v).map(|(a, b)| ((a - b).abs() * FIXED_SCALE) as u64 as u128).sum()
}

/// A distance carried as an unevaluated sum `hi + lo` (double-double), so
/// that weighting the exact group sums adds no rounding that could reorder
/// near-equal candidates. `hi` is the distance rounded to `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Dist {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dist {
    let s = a + b;
    Dist { hi: s, lo: b - (s - a) }
}

impl Dist {
    /// `w · sum / 2^63` for an exact fixed-point group sum.
    fn weighted(w: f64, sum: u128) -> Dist {
        let hi = sum as f64;
        let rest = (sum as i128 - hi as i128) as f64;
        let (hi, rest) = (hi / FIXED_SCALE, rest / FIXED_SCALE);
        let p = w * hi;
        let err = w.mul_add(hi, -p);
        quick_two_sum(p, err + w * rest)
    }

    fn add(self, other: Dist) -> Dist {
        let (s, e) = two_sum(self.hi, other.hi);
        quick_two_sum(s, e + self.lo + other.lo)
    }
}

/// Bounded, monotone similarity used for downstream scoring.
pub fn similarity(distance: f64) -> f64 {
    1.0 / (1.0 + distance)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub user_id: String,
    pub distance: f64,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchParams {
    pub k: usize,
    pub weights: GroupWeights,
    pub partitions: usize,
}

impl SearchParams {
    pub fn new(k: usize, weights: GroupWeights) -> Self {
        Self { k, weights, partitions: 1 }
    }

    pub fn with_partitions(mut self, partitions: usize) -> Self {
        self.partitions = partitions;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if self.partitions == 0 {
            return Err(Error::Argument("partitions must be at least 1".into()));
        }
        Ok(())
    }
}

/// A heap entry; index order equals user id order inside a [`ProfileIndex`].
#[derive(Clone, Copy, Debug)]
struct Hit {
    distance: Dist,
    idx: usize,
}

impl PartialEq for Hit {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit {}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .hi
            .total_cmp(&other.distance.hi)
            .then(self.distance.lo.total_cmp(&other.distance.lo))
            .then(self.idx.cmp(&other.idx))
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<Hit>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    fn push(&mut self, hit: Hit) {
        if self.heap.len() < self.k {
            self.heap.push(hit);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if hit < *top {
                *top = hit;
            }
        }
    }

    fn into_sorted(self) -> Vec<Hit> {
        self.heap.into_sorted_vec()
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Immutable snapshot of every user's feature vector.
#[derive(Clone, Debug)]
pub struct ProfileIndex {
    schema: Arc<FeatureSchema>,
    vectors: Vec<FeatureVector>,
    positions: HashMap<String, usize>,
    hashes: Vec<u64>,
    /// Coordinate range of each group, in [`FeatureGroup::ALL`] order.
    spans: [Range<usize>; 6],
}

impl ProfileIndex {
    pub fn new(schema: Arc<FeatureSchema>, vectors: impl IntoIterator<Item = FeatureVector>) -> Result<Self> {
        let mut vectors: Vec<FeatureVector> = vectors.into_iter().collect();
        vectors.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        let m = schema.dim();
        for pair in vectors.windows(2) {
            if pair[0].user_id == pair[1].user_id {
                return Err(Error::Argument(format!("duplicate vector for user `{}`", pair[0].user_id)));
            }
        }
        if let Some(bad) = vectors.iter().find(|v| v.dim() != m) {
            return Err(Error::LengthMismatch { expected: m, actual: bad.dim() });
        }
        if let Some(bad) = vectors.iter().find(|v| v.coords.iter().any(|c| !(0.0..=1.0).contains(c))) {
            return Err(Error::Argument(format!("vector of `{}` has a coordinate outside [0, 1]", bad.user_id)));
        }
        let positions = vectors.iter().enumerate().map(|(i, v)| (v.user_id.clone(), i)).collect();
        let hashes = vectors.iter().map(|v| stable_hash(&v.user_id)).collect();
        let spans = FeatureGroup::ALL.map(|g| schema.range(g));
        Ok(Self { schema, vectors, positions, hashes, spans })
    }

    /// Vectorizes every user with events in `store`. With a window, only the
    /// events at or after `reference - window` are used.
    pub fn build(
        store: &RecordStore,
        schema: Arc<FeatureSchema>,
        window: Option<TimeDelta>,
        reference: DateTime<Utc>,
    ) -> Result<Self> {
        let users: Vec<&str> = store.user_ids().collect();
        let vectors = users
            .par_iter()
            .map(|&user| {
                let events = store.events_for(user, window, reference)?;
                vectorize(user, events, store.profile(user), &schema)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(schema, vectors)
    }

    /// Full-history index over the store's own catalog and vocabulary.
    pub fn from_store(store: &RecordStore) -> Result<Self> {
        let schema = Arc::new(FeatureSchema::for_store(store)?);
        let reference = store.latest_timestamp().unwrap_or_default();
        Self::build(store, schema, None, reference)
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<&FeatureVector> {
        self.positions.get(user_id).map(|&i| &self.vectors[i])
    }

    pub fn contains(&self, user_id: &str) -> bool {
        self.positions.contains_key(user_id)
    }

    /// Vectors in ascending user id order.
    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    fn target(&self, user_id: &str) -> Result<usize> {
        self.positions.get(user_id).copied().ok_or_else(|| Error::UnknownUser(user_id.to_owned()))
    }

    /// Serial exact search.
    pub fn k_nearest(&self, target: &str, params: &SearchParams) -> Result<Vec<Neighbor>> {
        params.validate()?;
        self.search(target, params.k, &params.weights, |_| true)
    }

    /// Partition-parallel exact search; same output as [`Self::k_nearest`].
    pub fn k_nearest_partitioned(&self, target: &str, params: &SearchParams) -> Result<Vec<Neighbor>> {
        params.validate()?;
        let (t, w) = self.prepare(target, params.k, &params.weights)?;
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); params.partitions];
        for (i, h) in self.hashes.iter().enumerate() {
            shards[(h % params.partitions as u64) as usize].push(i);
        }
        let mut merged: Vec<Hit> = shards
            .par_iter()
            .map(|shard| self.scan(t, params.k, &w, shard.iter().copied(), |_| true))
            .flatten()
            .collect();
        merged.sort();
        merged.truncate(params.k);
        Ok(self.neighbors(merged))
    }

    /// Serial search restricted to users accepted by `keep`.
    pub(crate) fn search(
        &self,
        target: &str,
        k: usize,
        weights: &GroupWeights,
        keep: impl Fn(&FeatureVector) -> bool,
    ) -> Result<Vec<Neighbor>> {
        let (t, w) = self.prepare(target, k, weights)?;
        let hits = self.scan(t, k, &w, 0..self.vectors.len(), keep);
        Ok(self.neighbors(hits))
    }

    /// Weighted distance between two indexed users, as the search computes it.
    pub fn distance_between(&self, a: &str, b: &str, weights: &GroupWeights) -> Result<f64> {
        weights.validate()?;
        let (a, b) = (self.target(a)?, self.target(b)?);
        Ok(self.grouped_l1(&self.vectors[a].coords, &self.vectors[b].coords, &weights.genes()).hi)
    }

    fn prepare(&self, target: &str, k: usize, weights: &GroupWeights) -> Result<(usize, [f64; 6])> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        weights.validate()?;
        Ok((self.target(target)?, weights.genes()))
    }

    /// `Σ_g w_g · Σ_{i∈g} |u_i − v_i|`. Each group's inner sum is exact and
    /// independent of coordinate order, and the weighted combination keeps
    /// twice the working precision, so users with the same per-group
    /// differences tie exactly under every weighting and scaling all weights
    /// does not reorder candidates.
    fn grouped_l1(&self, u: &[f64], v: &[f64], w: &[f64; 6]) -> Dist {
        let mut d = Dist::default();
        for (range, &wg) in self.spans.iter().zip(w) {
            if wg != 0.0 {
                d = d.add(Dist::weighted(wg, exact_l1(&u[range.clone()], &v[range.clone()])));
            }
        }
        d
    }

    fn scan(
        &self,
        target: usize,
        k: usize,
        weights: &[f64; 6],
        candidates: impl Iterator<Item = usize>,
        keep: impl Fn(&FeatureVector) -> bool,
    ) -> Vec<Hit> {
        let query = &self.vectors[target].coords;
        let mut top = TopK::new(k);
        for idx in candidates {
            if idx == target || !keep(&self.vectors[idx]) {
                continue;
            }
            let distance = self.grouped_l1(query, &self.vectors[idx].coords, weights);
            top.push(Hit { distance, idx });
        }
        top.into_sorted()
    }

    fn neighbors(&self, hits: Vec<Hit>) -> Vec<Neighbor> {
        hits.into_iter()
            .map(|h| Neighbor {
                user_id: self.vectors[h.idx].user_id.clone(),
                distance: h.distance.hi,
                similarity: similarity(h.distance.hi),
            })
            .collect()
    }
}
