//! Causal U-Net speech enhancement on a 16 kHz, 512/256 STFT: feature
//! frontend, building blocks, network assembly, complexity accounting,
//! training and inference.

pub mod complexity;
pub mod error;
pub mod frontend;
pub mod network;
pub mod nn;
pub mod training;

pub use complexity::{report, ComplexityReport};
pub use error::{Error, Result};
pub use network::{ArchitectureSpec, Model};
pub use nn::{BlockSpec, BlockType};
