//! Memory-based, user-based collaborative filtering for learning content.
//!
//! Users are points in a feature space built from their activity on decks
//! (association, engagement and ratings) plus demographics. Recommendations
//! come from the `k` nearest users under a weighted L1 distance: decks those
//! neighbors touched that the target has not are ranked by the similarity
//! mass behind them, optionally blended with deck popularity.
//!
//! The pieces, bottom-up:
//!
//! - [`record_store`]: append-only activity log with pseudonymized users.
//! - [`feature_space`]: the deterministic user → vector mapping and weights.
//! - [`knn_engine`]: exact serial and partition-parallel k-NN search.
//! - [`recommender`]: cross-matching, popularity, hybrid blend, rating
//!   prediction and the cold-start fallback.
//! - [`weight_optimizer`]: genetic search over the feature-group weights.
//! - [`evaluation`]: temporal split, metric suite, synthetic data.
//! - [`service`] and [`cli`]: the HTTP front door and the `cfrec` binary.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod feature_space;
pub mod knn_engine;
pub mod recommender;
pub mod record_store;
pub mod service;
pub mod weight_optimizer;

pub use error::{Error, Result};
pub use feature_space::{
    build_schema, expand_weights, vectorize, FeatureGroup, FeatureSchema, FeatureVector, GroupWeights,
};
pub use knn_engine::{distance, Neighbor, ProfileIndex, SearchParams};
pub use recommender::{HybridConfig, PopularityWindow, Recommendation, RecommendationResponse, Recommender, Source};
pub use record_store::{
    anonymize, ActivityEvent, DemographicProfile, EventKind, Pseudonymizer, RawEvent, RecordStore, Vocabulary,
};
