//! Genetic search for feature-group weights on data where only the rating
//! coordinates tell the clusters apart.
//!
//! cargo run --release --example optimize_weights

use cfrec::evaluation::synthetic::{generate_rating_signal, RatingSignalParams};
use cfrec::weight_optimizer::{optimize_weights, EvalParams, GaConfig};
use cfrec::FeatureGroup;

fn main() -> cfrec::Result<()> {
    let params = RatingSignalParams::default();
    let store = generate_rating_signal(&params)?.into_store()?;
    let total = (params.noise_visits + params.cluster_ratings + params.tail_visits) as f64;
    let eval = EvalParams { holdout_fraction: params.tail_visits as f64 / total, k: 5, n: 3 };
    let config = GaConfig { population_size: 16, generations: 15, ..GaConfig::new(1) };

    let result = optimize_weights(&store, &config, &eval)?;
    for g in &result.trace {
        println!("generation {:>2}  best {:.4}  mean {:.4}", g.generation, g.best_fitness, g.mean_fitness);
    }
    for (group, w) in FeatureGroup::ALL.iter().zip(result.best) {
        println!("{:<12} {w:.3}", group.name());
    }
    println!("{}", result.weights().to_json());
    Ok(())
}
