//! Soup of category experts.
//!
//! Given a leaderboard of same-architecture checkpoints scored per benchmark
//! category, this crate finds the categories whose scores are weakly
//! correlated across models, picks the best model for each, searches a
//! rational weight lattice for the best weighted average of those experts, and
//! writes the averaged checkpoint. It also provides Shapley attribution with
//! souping as the characteristic function, and win-rate and correlation
//! comparisons of a soup against its ingredients.

pub mod analysis;
pub mod error;
pub mod evaluator;
pub mod pipeline;
pub mod scorestore;
pub mod selection;
pub mod shapley;
pub mod soup;
pub mod weightgrid;

pub use error::{Error, ErrorClass, Result};
pub use evaluator::{CachedEvaluator, CategoryScores, CheckpointEvaluator, RecipeEvaluator, SyntheticEvaluator};
pub use pipeline::{run_soce, run_uniform_baselines, RunConfig, SoceRun};
pub use scorestore::{CorrelationMatrix, ScoreMatrix};
pub use soup::{DType, Tensor, TensorMap};
pub use weightgrid::{GridSpec, Recipe};
