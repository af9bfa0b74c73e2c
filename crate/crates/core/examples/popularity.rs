//! Deck popularity over the whole history and the most recent week.
//!
//! cargo run --example popularity

use cfrec::evaluation::synthetic::{generate_synthetic, SynthParams};
use cfrec::recommender::popularity;
use cfrec::PopularityWindow;

fn main() -> cfrec::Result<()> {
    let store = generate_synthetic(&SynthParams { rng_seed: 11, ..SynthParams::default() })?.into_store()?;
    let reference = store.latest_timestamp().unwrap_or_default();
    for window in [PopularityWindow::All, PopularityWindow::Week] {
        println!("window {window:?}");
        for s in popularity(&store, window, reference, &Default::default()).iter().take(5) {
            let avg = s.avg_rating.map_or("-".to_string(), |r| format!("{r:.2}"));
            println!(
                "  {}  score {:>7.2}  visits {:>3}  edits {:>2}  comments {:>2}  likes {:>2}  avg rating {avg}",
                s.deck_id, s.raw_score, s.visits, s.edits, s.comments, s.likes
            );
        }
    }
    Ok(())
}
