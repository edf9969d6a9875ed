//! Layers, blocks and the attention module.

pub mod blocks;
pub mod ctfa;
pub mod ctx;
pub mod layers;
pub mod param;
pub mod rep;
pub mod shuffle;

pub use blocks::{build_block, effective_groups, Block, BlockPlacement, BlockSpec, BlockType, Body};
pub use ctfa::Ctfa;
pub use ctx::{BnUpdate, Ctx, StreamState};
pub use layers::{aprelu, Act, Aprelu, BatchNorm, Conv, ConvShape, Gru, LayerNorm, Linear, Prelu};
pub use param::{LayerCost, Module, Param};
pub use rep::RepDws;
pub use shuffle::{channel_shuffle, shuffle_var};
