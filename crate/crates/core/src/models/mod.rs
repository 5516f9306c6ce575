//! Model graphs and the built-in architectures.

mod graph;
mod zoo;

pub use graph::{GraphBuilder, ModelGraph, Node, NodeId, Op, PruneGroup, Successor};
pub use zoo::{lenet5, small_resnet, small_vgg, ResidualStrategy};
