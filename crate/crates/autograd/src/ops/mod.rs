pub mod conv;
pub mod elementwise;
pub mod nn;
pub mod rnn;
pub mod shape;

pub use conv::{conv_out_len, Conv2dCfg};
pub use elementwise::sigmoid;
pub use nn::BatchNormOut;
pub use rnn::gru_step_macs;
