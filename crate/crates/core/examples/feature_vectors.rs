//! How one user's history turns into a feature vector, group by group.
//!
//! cargo run --example feature_vectors

use std::collections::BTreeSet;

use cfrec::feature_space::{engagement_score, normalize_rating};
use cfrec::{build_schema, vectorize, ActivityEvent, DemographicProfile, EventKind, FeatureGroup};

fn event(id: &str, deck: &str, kind: EventKind, value: Option<f64>, ts: &str) -> ActivityEvent {
    ActivityEvent {
        event_id: id.into(),
        user_id: "u1".into(),
        deck_id: deck.into(),
        kind,
        value,
        timestamp: ts.parse().expect("valid timestamp"),
    }
}

fn main() -> cfrec::Result<()> {
    let schema = build_schema(["algebra", "geometry", "physics"], ["math", "python"], ["berlin", "lyon"])?;
    let events = [
        event("e1", "algebra", EventKind::Visit, Some(30.0), "2024-03-01T09:00:00Z"),
        event("e2", "algebra", EventKind::Edit, None, "2024-03-01T09:10:00Z"),
        event("e3", "algebra", EventKind::Rating, Some(2.0), "2024-03-01T09:20:00Z"),
        event("e4", "algebra", EventKind::Rating, Some(4.0), "2024-03-02T09:20:00Z"),
        event("e5", "physics", EventKind::Search, None, "2024-03-03T10:00:00Z"),
    ];
    let profile = DemographicProfile {
        user_id: "u1".into(),
        age: Some(27),
        skills: BTreeSet::from(["math".to_string()]),
        location: Some("lyon".into()),
        registered_at: "2024-01-15T00:00:00Z".parse().expect("valid timestamp"),
    };

    let v = vectorize("u1", &events, Some(&profile), &schema)?;
    println!("dimension {}", v.dim());
    for group in FeatureGroup::ALL {
        println!("{:<12} {:?}", group.name(), &v.coords[schema.range(group)]);
    }
    // Searches do not associate a user with a deck; the latest rating wins.
    println!("engagement of 2 events: {:.4}", engagement_score(2));
    println!("rating 4 normalizes to {}", normalize_rating(4.0)?);
    Ok(())
}
