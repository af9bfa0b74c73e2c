//! Exact k-NN over a synthetic population, serial and partitioned, plus the
//! effect of reweighting feature groups.
//!
//! cargo run --release --example knn_search

use cfrec::evaluation::synthetic::{generate_synthetic, SynthParams};
use cfrec::{GroupWeights, ProfileIndex, SearchParams};

fn main() -> cfrec::Result<()> {
    let data = generate_synthetic(&SynthParams { n_users: 500, n_decks: 60, rng_seed: 7, ..SynthParams::default() })?;
    let clusters = data.user_cluster.clone();
    let store = data.into_store()?;
    let index = ProfileIndex::from_store(&store)?;
    let cluster = |u: &str| clusters.iter().find(|(id, _)| id == u).map(|&(_, c)| c);

    let target = &index.vectors()[0].user_id;
    println!(
        "{} users, {} coordinates, target {target} in cluster {:?}",
        index.len(),
        index.schema().dim(),
        cluster(target)
    );

    let params = SearchParams::new(8, GroupWeights::default());
    let serial = index.k_nearest(target, &params)?;
    for n in &serial {
        println!("  {}  d={:.4}  sim={:.4}  cluster {:?}", n.user_id, n.distance, n.similarity, cluster(&n.user_id));
    }

    let partitioned = index.k_nearest_partitioned(target, &params.clone().with_partitions(4))?;
    println!("partitioned result identical: {}", partitioned == serial);

    // Only the association group counts.
    let assoc_only = GroupWeights::from_genes([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let same = index
        .k_nearest(target, &SearchParams::new(8, assoc_only))?
        .iter()
        .filter(|n| cluster(&n.user_id) == cluster(target))
        .count();
    println!("association only: {same}/8 neighbors share the target's cluster");
    Ok(())
}
