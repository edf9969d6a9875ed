//! Architecture search for the encoder of a causal U-Net: a factorized
//! search space, an autoregressive LSTM controller trained with clipped
//! policy-gradient updates, a complexity-aware reward, pluggable candidate
//! evaluators and an exhaustive oracle for small spaces.

pub mod config;
pub mod controller;
pub mod error;
pub mod evaluator;
pub mod ppo;
pub mod reward;
pub mod search;
pub mod space;

pub use config::SearchConfig;
pub use controller::Controller;
pub use error::{NasError, Result};
pub use evaluator::{Evaluator, PesqEvaluator, ToyEvaluator, TrainingEvaluator};
pub use ppo::{Ppo, PpoConfig};
pub use reward::{reward, RewardConfig};
pub use search::{brute_force, search, Candidate, SearchResult, TopK, TrendRow};
pub use space::SearchSpace;
