//! Top-N lists for one user as pure CF, pure popularity and a blend, and
//! the popularity fallback for a user with too little history.
//!
//! cargo run --release --example hybrid_recommend

use cfrec::evaluation::synthetic::{generate_synthetic, user_name, SynthParams};
use cfrec::{ActivityEvent, EventKind, GroupWeights, HybridConfig, ProfileIndex, Recommender, RecordStore};

fn show(label: &str, store: &RecordStore, index: &ProfileIndex, user: &str, alpha: f64) -> cfrec::Result<()> {
    let reference = store.latest_timestamp().unwrap_or_default();
    let rec = Recommender::new(index, store, GroupWeights::default(), reference);
    let response = rec.recommend(user, &HybridConfig { alpha, n: 5, ..HybridConfig::default() })?;
    println!("{label} (cold start: {})", response.cold_start);
    for r in &response.items {
        println!("  {}  {:.4}  {}", r.deck_id, r.score, r.source);
    }
    Ok(())
}

fn main() -> cfrec::Result<()> {
    let mut store = generate_synthetic(&SynthParams { rng_seed: 3, ..SynthParams::default() })?.into_store()?;
    let newcomer = "u-new";
    store.insert(ActivityEvent {
        event_id: "new-1".into(),
        user_id: newcomer.into(),
        deck_id: store.catalog().iter().next().cloned().expect("non-empty catalog"),
        kind: EventKind::Visit,
        value: None,
        timestamp: store.latest_timestamp().unwrap_or_default(),
    })?;
    let index = ProfileIndex::from_store(&store)?;
    let user = user_name(0);

    show("cf only", &store, &index, &user, 1.0)?;
    show("popularity only", &store, &index, &user, 0.0)?;
    show("blend 0.7", &store, &index, &user, 0.7)?;
    show("one-event newcomer", &store, &index, newcomer, 0.7)?;
    Ok(())
}
