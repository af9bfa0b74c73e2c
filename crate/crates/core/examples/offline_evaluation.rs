//! Temporal holdout evaluation of the CF, popularity and hybrid variants.
//!
//! cargo run --release --example offline_evaluation

use cfrec::evaluation::synthetic::{generate_synthetic, SynthParams};
use cfrec::evaluation::{run_offline_eval, EvalConfig};

fn main() -> cfrec::Result<()> {
    let store =
        generate_synthetic(&SynthParams { n_users: 300, rng_seed: 5, ..SynthParams::default() })?.into_store()?;
    let summary = run_offline_eval(&store, &EvalConfig::default())?;
    for report in &summary.reports {
        print!("{:<10} users {:>3}", report.variant.as_str(), report.users);
        for (name, value) in report.metrics.entries() {
            match value {
                Some(v) => print!("  {name} {v:.4}"),
                None => print!("  {name} -"),
            }
        }
        println!();
    }
    print!("{}", summary.to_csv());
    Ok(())
}
