//! Layer arithmetic: forward passes, backward passes with accumulating
//! gradient buffers, and the structural edits pruning needs.

mod activation;
mod batchnorm;
mod conv;
mod linear;

pub use activation::{
    flatten, maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward,
    softmax_cross_entropy,
};
pub use batchnorm::{BatchNormCache, BatchNormState};
pub use conv::{conv_out_dim, PrunableConv};
pub use linear::{flatten_keep_indices, LinearLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
