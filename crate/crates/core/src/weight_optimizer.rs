//! Genetic search over the six feature-group weights.
//!
//! Fitness is the mean precision@n of neighbor recommendations on a temporal
//! holdout. The search is a generational GA with tournament selection,
//! uniform crossover, additive Gaussian mutation clipped to the gene bounds
//! and single-individual elitism. All randomness comes from one seeded
//! ChaCha stream consumed in a fixed order, so runs are reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::metrics::precision_at_n;
use crate::evaluation::{temporal_split, Split};
use crate::feature_space::{FeatureSchema, GroupWeights};
use crate::knn_engine::ProfileIndex;
use crate::recommender::Recommender;
use crate::record_store::RecordStore;

pub const GENE_MIN: f64 = 0.0;
pub const GENE_MAX: f64 = 10.0;

pub type Genes = [f64; 6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    /// Probability of taking each gene from the first parent.
    pub crossover_rate: f64,
    pub mutation_sigma: f64,
    pub elitism: usize,
    pub rng_seed: u64,
}

impl GaConfig {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            population_size: 32,
            generations: 50,
            tournament_size: 3,
            crossover_rate: 0.5,
            mutation_sigma: 0.1,
            elitism: 1,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Argument("population must hold at least 2 individuals".into()));
        }
        if self.generations == 0 {
            return Err(Error::Argument("at least one generation is required".into()));
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return Err(Error::Argument("tournament size must be in [1, population]".into()));
        }
        if !(self.mutation_sigma > 0.0 && self.mutation_sigma.is_finite()) {
            return Err(Error::Argument("mutation sigma must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::Argument("crossover rate must be in [0, 1]".into()));
        }
        if self.elitism >= self.population_size {
            return Err(Error::Argument("elitism must leave room for offspring".into()));
        }
        Ok(())
    }
}

/// Holdout protocol the fitness is measured with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub holdout_fraction: f64,
    pub k: usize,
    pub n: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self { holdout_fraction: 0.2, k: 10, n: 5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genes: Genes,
    pub fitness: Option<f64>,
}

/// Everything fitness needs that does not depend on the weights.
///
/// Feature vectors do not depend on the weights, so the training index is
/// built once and shared by every evaluation.
pub struct FitnessContext {
    train: RecordStore,
    holdout: BTreeMap<String, BTreeSet<String>>,
    index: ProfileIndex,
    params: EvalParams,
}

impl FitnessContext {
    pub fn new(train: RecordStore, holdout: BTreeMap<String, BTreeSet<String>>, params: EvalParams) -> Result<Self> {
        if holdout.is_empty() {
            return Err(Error::Infeasible("empty holdout".into()));
        }
        let schema = Arc::new(FeatureSchema::for_store(&train)?);
        let reference = train.latest_timestamp().unwrap_or_default();
        let index = ProfileIndex::build(&train, schema, None, reference)?;
        Ok(Self { train, holdout, index, params })
    }

    pub fn from_split(split: Split, params: EvalParams) -> Result<Self> {
        Self::new(split.train, split.holdout, params)
    }

    /// Splits `store` and prepares the context.
    pub fn from_store(store: &RecordStore, params: EvalParams) -> Result<Self> {
        let split = temporal_split(store, params.holdout_fraction)?;
        if split.holdout.len() < 2 {
            return Err(Error::Infeasible(format!(
                "need at least 2 users with held-out activity, found {}",
                split.holdout.len()
            )));
        }
        Self::from_split(split, params)
    }

    pub fn holdout_users(&self) -> usize {
        self.holdout.len()
    }

    /// Mean precision@n over the holdout users.
    pub fn fitness(&self, genes: &Genes) -> Result<f64> {
        let weights = GroupWeights::from_genes(*genes);
        weights.validate()?;
        let reference = self.train.latest_timestamp().unwrap_or_default();
        let rec = Recommender::new(&self.index, &self.train, weights, reference);
        let mut sum = 0.0;
        for (user, relevant) in &self.holdout {
            let list: Vec<String> =
                rec.cf_recommend(user, self.params.k, self.params.n)?.into_iter().map(|r| r.deck_id).collect();
            sum += precision_at_n(&list, relevant, self.params.n);
        }
        Ok(sum / self.holdout.len() as f64)
    }
}

/// Mean precision@n of CF recommendations built from `train` with the
/// weights in `genes`, against `holdout`.
pub fn fitness(
    genes: &Genes,
    train: &RecordStore,
    holdout: &BTreeMap<String, BTreeSet<String>>,
    params: &EvalParams,
) -> Result<f64> {
    FitnessContext::new(train.clone(), holdout.clone(), params.clone())?.fitness(genes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationResult {
    pub best: Genes,
    pub best_fitness: f64,
    pub trace: Vec<GenerationStats>,
}

impl OptimizationResult {
    pub fn weights(&self) -> GroupWeights {
        GroupWeights::from_genes(self.best)
    }

    /// `generation,best_fitness,mean_fitness` rows.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("generation,best_fitness,mean_fitness\n");
        for g in &self.trace {
            writeln!(out, "{},{},{}", g.generation, g.best_fitness, g.mean_fitness).expect("writing to a String");
        }
        out
    }
}

fn evaluate(ctx: &FitnessContext, population: &mut [Individual]) -> Result<()> {
    let scores: Vec<f64> = population.par_iter().map(|ind| ctx.fitness(&ind.genes)).collect::<Result<_>>()?;
    for (ind, f) in population.iter_mut().zip(scores) {
        ind.fitness = Some(f);
    }
    Ok(())
}

fn fit(ind: &Individual) -> f64 {
    ind.fitness.expect("population is evaluated before selection")
}

/// Index of the fittest individual; the earliest wins ties.
fn fittest(population: &[Individual]) -> usize {
    let mut best = 0;
    for (i, ind) in population.iter().enumerate().skip(1) {
        if fit(ind) > fit(&population[best]) {
            best = i;
        }
    }
    best
}

fn tournament<'p>(rng: &mut ChaCha8Rng, population: &'p [Individual], size: usize) -> &'p Individual {
    let mut winner = &population[rng.random_range(0..population.len())];
    for _ in 1..size {
        let challenger = &population[rng.random_range(0..population.len())];
        if fit(challenger) > fit(winner) {
            winner = challenger;
        }
    }
    winner
}

/// Runs the GA from a uniformly random population in `[0, 10]^6` whose
/// first individual is the all-ones baseline.
pub fn optimize_weights(store: &RecordStore, config: &GaConfig, params: &EvalParams) -> Result<OptimizationResult> {
    config.validate()?;
    let ctx = FitnessContext::from_store(store, params.clone())?;
    optimize_with_context(&ctx, config)
}

pub fn optimize_with_context(ctx: &FitnessContext, config: &GaConfig) -> Result<OptimizationResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut initial = vec![[1.0; 6]];
    for _ in 1..config.population_size {
        initial.push(std::array::from_fn(|_| rng.random_range(GENE_MIN..=GENE_MAX)));
    }
    run(ctx, config, initial, rng)
}

/// Runs the GA from an explicit initial population.
pub fn optimize_with_population(
    ctx: &FitnessContext,
    config: &GaConfig,
    initial: Vec<Genes>,
) -> Result<OptimizationResult> {
    config.validate()?;
    if initial.len() != config.population_size {
        return Err(Error::Argument(format!(
            "initial population has {} individuals, config expects {}",
            initial.len(),
            config.population_size
        )));
    }
    if initial.iter().flatten().any(|g| !(GENE_MIN..=GENE_MAX).contains(g)) {
        return Err(Error::Argument("initial genes must lie in [0, 10]".into()));
    }
    let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    run(ctx, config, initial, rng)
}

fn run(
    ctx: &FitnessContext,
    config: &GaConfig,
    initial: Vec<Genes>,
    mut rng: ChaCha8Rng,
) -> Result<OptimizationResult> {
    let noise = Normal::new(0.0, config.mutation_sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut population: Vec<Individual> =
        initial.into_iter().map(|genes| Individual { genes, fitness: None }).collect();
    evaluate(ctx, &mut population)?;

    let mut best = population[fittest(&population)].clone();
    let mut trace = Vec::with_capacity(config.generations);
    for generation in 0..config.generations {
        let leader = fittest(&population);
        if fit(&population[leader]) > fit(&best) {
            best = population[leader].clone();
        }
        trace.push(GenerationStats {
            generation,
            best_fitness: fit(&population[leader]),
            mean_fitness: population.iter().map(fit).sum::<f64>() / population.len() as f64,
        });
        if generation + 1 == config.generations {
            break;
        }

        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| fit(&population[b]).total_cmp(&fit(&population[a])).then(a.cmp(&b)));
        let mut next: Vec<Individual> = ranked[..config.elitism].iter().map(|&i| population[i].clone()).collect();
        while next.len() < config.population_size {
            let a = tournament(&mut rng, &population, config.tournament_size);
            let b = tournament(&mut rng, &population, config.tournament_size);
            let genes: Genes = std::array::from_fn(|i| {
                let inherited = if rng.random::<f64>() < config.crossover_rate { a.genes[i] } else { b.genes[i] };
                (inherited + noise.sample(&mut rng)).clamp(GENE_MIN, GENE_MAX)
            });
            next.push(Individual { genes, fitness: None });
        }
        // elites keep their fitness; only offspring are evaluated
        evaluate(ctx, &mut next[config.elitism..])?;
        population = next;
    }

    Ok(OptimizationResult { best: best.genes, best_fitness: fit(&best), trace })
}
