//! Offline training: split trees, prototypes, lookup tables and thresholds.

mod linalg;
pub mod lut;
pub mod prototypes;
pub mod thresholds;
pub mod tree;

pub use lut::{build_luts, lut_affine, quantize_luts, quantize_luts_with, QuantizedLutSet, RealLuts};
pub use prototypes::{
    encode_all, init_prototypes, leaf_means, learn_codebooks, refine_prototypes_ridge, refine_prototypes_ridge_to, ridge_objective, Codebook, RidgeSolution,
    SubspaceLayout,
};
pub use thresholds::{calibrate_thresholds, ThresholdSet};
pub use tree::{
    assign_buckets, learn_split_tree, learn_split_tree_with_stats, optimal_split_threshold, SplitTree, TreeFit,
};
