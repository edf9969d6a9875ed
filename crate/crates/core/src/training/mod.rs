//! Objective, schedules, synthetic data and the optimization loop.

pub mod data;
pub mod loss;
pub mod manifest;
pub mod schedule;
pub mod trainer;

pub use data::{mix, synthetic_set, MixSpec, Pair, SyntheticConfig};
pub use loss::{hybrid_loss, sisnr_db, sisnr_loss, spectral_losses, LossWeights};
pub use manifest::{load_manifest, manifest_pairs, parse_manifest, ManifestEntry};
pub use schedule::{Plateau, ScheduleConfig, ScheduleKind};
pub use trainer::{LogEntry, TrainConfig, Trainer, Validation};
