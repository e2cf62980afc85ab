//! I/O pruning: which output neurons a layer must produce, and how much of
//! the unpruned traffic that is.

use crate::cost::LayerShape;
use crate::error::{AmuError, Result};
use crate::train::Codebook;

/// Output neurons needed by the next layer, one per slot `o·M + m`:
/// `m · sub_dim_next + split_index(codebook m, level o)`.
///
/// A split index repeated across levels of one codebook yields the same
/// neuron in several slots.
pub fn compute_pruned_positions(next_codebooks: &[Codebook]) -> Result<Vec<usize>> {
    let Some(first) = next_codebooks.first() else {
        return Err(AmuError::config("next layer has no codebooks"));
    };
    let levels = first.tree.n_levels();
    let sub_dim = first.sub_dim();
    let m = next_codebooks.len();
    if next_codebooks.iter().enumerate().any(|(i, cb)| cb.slice != i || cb.tree.n_levels() != levels || cb.sub_dim() != sub_dim) {
        return Err(AmuError::config("next-layer codebooks must cover contiguous equal slices with equal depth"));
    }
    let mut positions = vec![0; levels * m];
    for o in 0..levels {
        for (mi, cb) in next_codebooks.iter().enumerate() {
            positions[o * m + mi] = mi * sub_dim + cb.tree.split_indexes[o];
        }
    }
    Ok(positions)
}

/// `(I·N / U_prev, O·M / U_cur)`.
pub fn compression_ratios(shape: LayerShape, u_prev: usize, u_cur: usize) -> Result<(f64, f64)> {
    if u_prev == 0 || u_cur == 0 {
        return Err(AmuError::config("unpruned feature-map size U must be positive"));
    }
    let input = (shape.i_levels * shape.n_codebooks) as f64 / u_prev as f64;
    let output = (shape.o_packages * shape.m_codebooks_out) as f64 / u_cur as f64;
    Ok((input, output))
}

/// Ratios for every layer of a chain given the unpruned widths `U_0 … U_L`.
pub fn chain_compression_ratios(shapes: &[LayerShape], widths: &[usize]) -> Result<Vec<(f64, f64)>> {
    if widths.len() != shapes.len() + 1 {
        return Err(AmuError::config("need one more width than layers"));
    }
    shapes.iter().enumerate().map(|(i, &s)| compression_ratios(s, widths[i], widths[i + 1])).collect()
}
