//! LUT-based approximate matrix multiplication for quantized neural networks.
//!
//! Every dense layer `s = aᵀW` is replaced by an approximate multiplication
//! unit: the input is cut into `N` subspaces, a depth-`I` split tree per
//! subspace picks one of `2^I` prototypes, and precomputed tables of
//! prototype–weight dot products are summed. Only the `I·N` input values the
//! trees actually inspect travel between layers, and only the `O·M` outputs
//! the next layer inspects are computed.
//!
//! * [`model_io`]: IDX datasets, synthetic data, the reference MLP, model files.
//! * [`train`]: trees, prototypes, lookup tables and thresholds.
//! * [`runtime`]: packets, per-layer inference and network chaining.
//! * [`fit`]: turning a trained MLP into an [`runtime::AmuNetwork`].
//! * [`cost`]: initiation interval, memory and throughput estimates.
//! * [`experiment`]: depth sweeps over first-layer choices.
//! * [`baselines`]: exact and unpruned reference implementations.

pub mod baselines;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod matrix;
pub mod model_io;
pub mod runtime;
pub mod train;

pub use error::{AmuError, Result};
pub use matrix::DenseMatrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/trees.md")]
    mod trees {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/pruning.md")]
    mod pruning {}
    #[doc = include_str!("../../../book/src/packets.md")]
    mod packets {}
    #[doc = include_str!("../../../book/src/cost.md")]
    mod cost {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
