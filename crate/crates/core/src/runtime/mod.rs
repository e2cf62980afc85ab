//! Online inference: packets, per-layer encode and aggregate, pruned
//! chaining and convolution lowering.

pub mod im2col;
pub mod layer;
pub mod network;
pub mod packet;
pub mod pruning;

pub use im2col::{conv2d_gemm, im2col, ConvGeometry, TensorShape};
pub use layer::{aggregate, amu_forward, encode, threshold_quantize, AmuLayer};
pub use network::{network_forward, packetize_front, AmuNetwork, FrontEnd, Prediction, PIXEL_BITS};
pub use packet::{BlockGrid, FeaturePacket};
pub use pruning::{chain_compression_ratios, compression_ratios, compute_pruned_positions};
