//! Predicting a rating from the nearest users who rated the deck.
//!
//! cargo run --example predict_rating

use cfrec::{ActivityEvent, EventKind, GroupWeights, ProfileIndex, Recommender, RecordStore, Vocabulary};

fn main() -> cfrec::Result<()> {
    // Two taste groups over four decks; `target` behaves like group a.
    let history: &[(&str, &str, f64)] = &[
        ("a1", "d1", 5.0),
        ("a1", "d2", 5.0),
        ("a1", "d3", 2.0),
        ("a2", "d1", 4.0),
        ("a2", "d2", 5.0),
        ("a2", "d3", 1.0),
        ("b1", "d1", 1.0),
        ("b1", "d2", 2.0),
        ("b1", "d3", 5.0),
        ("b1", "d4", 5.0),
        ("b2", "d1", 2.0),
        ("b2", "d2", 1.0),
        ("b2", "d3", 4.0),
        ("b2", "d4", 4.0),
        ("a1", "d4", 2.0),
        ("target", "d1", 5.0),
        ("target", "d2", 4.0),
    ];
    let events = history.iter().enumerate().map(|(i, &(user, deck, rating))| ActivityEvent {
        event_id: format!("e{i}"),
        user_id: user.into(),
        deck_id: deck.into(),
        kind: EventKind::Rating,
        value: Some(rating),
        timestamp: chrono::DateTime::UNIX_EPOCH + chrono::TimeDelta::minutes(i as i64),
    });
    let store = RecordStore::from_parts(events, [], Vocabulary::default())?;
    let index = ProfileIndex::from_store(&store)?;
    let rec = Recommender::new(&index, &store, GroupWeights::default(), store.latest_timestamp().unwrap_or_default());

    for k in [1, 2, 4] {
        println!(
            "k={k}: d3 -> {:.3}, d4 -> {:.3}",
            rec.predict_rating("target", "d3", k)?,
            rec.predict_rating("target", "d4", k)?
        );
    }
    Ok(())
}
