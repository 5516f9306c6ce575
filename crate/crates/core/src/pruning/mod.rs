//! Decay schedule, filter criteria, weak-set partitioning, and the
//! structural edits that remove or zero filters across layers and optimizer
//! state.

mod apply;
mod criterion;
mod schedule;
mod select;

pub use apply::{
    apply_prune, count_flops, count_params, filter_counts, propagate_prune, shape_audit, soft_zero_audit,
    NextLayer,
};
pub use criterion::{score_filters, Criterion, CriterionAccumulator, LayerAccumulator, Mode};
pub use schedule::{decay_ratio, weak_count, PruneSchedule};
pub use select::{rank_ascending, select_partition, Partition};
