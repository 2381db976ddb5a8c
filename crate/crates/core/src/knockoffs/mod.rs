//! Construction of `d` knockoff copies per feature.
//!
//! A knockoff set is built batch by batch. For a batch `I` the augmented Gram
//! matrix `G^I` of `[X X̃^I]` is fixed by `Σ = XᵀX` and a scalar gap `s0`;
//! a symmetric root of `G^I` is rotated into `R^n` by a batch-specific slice of
//! one shared orthonormal basis so that its first `p` columns land exactly on
//! `X`.

mod construct;
mod design;
mod gram;
mod partition;

pub use construct::{construct_knockoffs, prepare_knockoffs, verify_gram, GramReport, KnockoffSet};
pub use design::{estimate_sigma, extend_design, required_rows, DesignData};
pub use gram::{
    build_gram_batch, build_gram_full, critical_s0_batch, critical_s0_full, S0Solver, S0_SAFETY,
};
pub use partition::{cluster_batches, BatchPartition, PartitionMethod};
