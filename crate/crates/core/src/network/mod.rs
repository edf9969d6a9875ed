//! Network assembly, configuration, persistence and streaming inference.

pub mod checkpoint;
pub mod gdprnn;
pub mod model;
pub mod spec;
pub mod stream;

pub use gdprnn::Gdprnn;
pub use model::Model;
pub use spec::{ArchitectureSpec, BottleneckConfig, ENCODER_BLOCKS};
pub use stream::{stream_enhance, StreamEnhancer};
