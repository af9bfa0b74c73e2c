//! Ranking, rating and beyond-accuracy metrics.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::record_store::RecordStore;

/// `|top-n ∩ relevant| / min(n, |recommended|)`; 0 for an empty list.
pub fn precision_at_n<S: AsRef<str>>(recommended: &[S], relevant: &BTreeSet<String>, n: usize) -> f64 {
    let shown = n.min(recommended.len());
    if shown == 0 {
        return 0.0;
    }
    hits(recommended, relevant, n) as f64 / shown as f64
}

/// `|top-n ∩ relevant| / |relevant|`; `None` when nothing is relevant, so
/// the user is left out of the average.
pub fn recall_at_n<S: AsRef<str>>(recommended: &[S], relevant: &BTreeSet<String>, n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(hits(recommended, relevant, n) as f64 / relevant.len() as f64)
}

fn hits<S: AsRef<str>>(recommended: &[S], relevant: &BTreeSet<String>, n: usize) -> usize {
    recommended.iter().take(n).filter(|d| relevant.contains(d.as_ref())).count()
}

/// `Σ gain_i / log2(i + 1)` over 1-based ranks.
pub fn dcg_at_n(gains: &[f64]) -> f64 {
    gains.iter().enumerate().map(|(i, g)| g / ((i + 2) as f64).log2()).sum()
}

/// DCG normalized by the ideal DCG; 0 when the ideal is 0.
pub fn ndcg_at_n(gains: &[f64], ideal: &[f64]) -> f64 {
    let best = dcg_at_n(ideal);
    if best == 0.0 {
        0.0
    } else {
        dcg_at_n(gains) / best
    }
}

/// Binary gains of the top-n list and the matching ideal gains.
pub fn binary_gains<S: AsRef<str>>(recommended: &[S], relevant: &BTreeSet<String>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let gains = recommended.iter().take(n).map(|d| if relevant.contains(d.as_ref()) { 1.0 } else { 0.0 }).collect();
    let ideal = vec![1.0; relevant.len().min(n)];
    (gains, ideal)
}

/// Mean squared error over `(predicted, actual)` pairs.
pub fn mse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Argument("mse needs at least one pair".into()));
    }
    Ok(pairs.iter().map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pairs.len() as f64)
}

pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    mse(pairs).map(f64::sqrt)
}

/// Fraction of the catalog recommended to at least one user.
pub fn coverage<L, S>(lists: &[L], catalog: &BTreeSet<String>) -> Result<f64>
where
    L: AsRef<[S]>,
    S: AsRef<str>,
{
    if catalog.is_empty() {
        return Err(Error::Argument("coverage needs a non-empty catalog".into()));
    }
    let shown: BTreeSet<&str> =
        lists.iter().flat_map(|l| l.as_ref().iter().map(AsRef::as_ref)).filter(|d| catalog.contains(*d)).collect();
    Ok(shown.len() as f64 / catalog.len() as f64)
}

/// Which users are associated with each deck in a (training) store.
#[derive(Clone, Debug, Default)]
pub struct Audience {
    users_of: BTreeMap<String, BTreeSet<String>>,
    total_users: usize,
}

impl Audience {
    pub fn from_store(store: &RecordStore) -> Self {
        let mut users_of: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for e in store.events().iter().filter(|e| e.kind.is_association()) {
            users_of.entry(e.deck_id.clone()).or_default().insert(e.user_id.clone());
        }
        Self { users_of, total_users: store.user_count() }
    }

    pub fn users_of(&self, deck: &str) -> Option<&BTreeSet<String>> {
        self.users_of.get(deck)
    }

    pub fn total_users(&self) -> usize {
        self.total_users
    }

    fn jaccard(&self, a: &str, b: &str) -> f64 {
        let empty = BTreeSet::new();
        let x = self.users_of(a).unwrap_or(&empty);
        let y = self.users_of(b).unwrap_or(&empty);
        let union = x.union(y).count();
        if union == 0 {
            // two decks nobody touched are indistinguishable
            return 1.0;
        }
        x.intersection(y).count() as f64 / union as f64
    }

    /// `1 − mean pairwise Jaccard` of the decks' audiences; 1 for a single
    /// deck, `None` for an empty list.
    pub fn diversity<S: AsRef<str>>(&self, list: &[S]) -> Option<f64> {
        match list.len() {
            0 => None,
            1 => Some(1.0),
            len => {
                let mut sum = 0.0;
                for i in 0..len {
                    for j in i + 1..len {
                        sum += self.jaccard(list[i].as_ref(), list[j].as_ref());
                    }
                }
                let pairs = (len * (len - 1) / 2) as f64;
                Some(1.0 - sum / pairs)
            }
        }
    }

    /// Mean self-information `−log2 p_d` of the list, where `p_d` is the
    /// share of users associated with the deck. Unseen decks use
    /// `p_d = 1 / (N + 1)`. `None` for an empty list.
    pub fn novelty<S: AsRef<str>>(&self, list: &[S]) -> Option<f64> {
        if list.is_empty() {
            return None;
        }
        let n = self.total_users as f64;
        let sum: f64 = list
            .iter()
            .map(|d| {
                let count = self.users_of(d.as_ref()).map_or(0, BTreeSet::len);
                let p = if count == 0 || n == 0.0 { 1.0 / (n + 1.0) } else { count as f64 / n };
                -p.log2()
            })
            .sum();
        Some(sum / list.len() as f64)
    }
}
