//! A seeded synthetic population and the clusters planted in it.
//!
//! cargo run --example synthetic_data

use std::collections::BTreeMap;

use cfrec::evaluation::synthetic::{generate_synthetic, SynthParams};

fn main() -> cfrec::Result<()> {
    let params = SynthParams { n_users: 40, n_decks: 12, n_clusters: 3, rng_seed: 9, ..SynthParams::default() };
    let data = generate_synthetic(&params)?;
    let again = generate_synthetic(&params)?;
    println!(
        "{} events, {} profiles, reproducible: {}",
        data.events.len(),
        data.profiles.len(),
        data.events == again.events
    );

    let mut kinds = BTreeMap::<&str, usize>::new();
    for e in &data.events {
        *kinds.entry(e.kind.as_str()).or_default() += 1;
    }
    println!("event kinds {kinds:?}");

    // Share of each cluster's activity that lands on its own decks.
    let deck_cluster: BTreeMap<&str, usize> = data.deck_cluster.iter().map(|(d, c)| (d.as_str(), *c)).collect();
    let user_cluster: BTreeMap<&str, usize> = data.user_cluster.iter().map(|(u, c)| (u.as_str(), *c)).collect();
    let on_cluster =
        data.events.iter().filter(|e| deck_cluster[e.deck_id.as_str()] == user_cluster[e.user_id.as_str()]).count();
    println!("on-cluster events {:.1}%", 100.0 * on_cluster as f64 / data.events.len() as f64);

    for e in data.events.iter().take(3) {
        println!("{}", e.to_json_line());
    }
    Ok(())
}
