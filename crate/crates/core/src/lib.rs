//! Progressive filter pruning for convolutional networks.
//!
//! Filters are pruned a little at a time during training: after every epoch
//! the weakest filters (by a weight- or gradient-based criterion) are split
//! into a hard set that is removed from the network and a soft set that is
//! zeroed but allowed to recover. The retained fraction decays
//! exponentially to the target over the run.

pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod nn;
pub mod optim;
pub mod pruning;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
