//! One approximate multiplication layer: allocator, encoders and aggregator.

use super::packet::{BlockGrid, FeaturePacket};
use crate::cost::{LayerShape, PartitionConfig};
use crate::error::{AmuError, Result};
use crate::train::{Codebook, QuantizedLutSet, ThresholdSet};

/// A pruned layer that reads `I` packages of `N` blocks and emits `O`
/// packages of `M` blocks (or raw accumulators when it is the read-out).
///
/// Output slot `o·M + m` holds neuron `luts.kept_positions[o·M + m]`. A
/// neuron may occupy several slots when the next layer's tree reuses a split
/// index across levels; its table is then duplicated so the table array
/// keeps its `O×M` geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct AmuLayer {
    pub shape: LayerShape,
    /// Width of the (possibly zero-padded) input vector, `N · sub_dim`.
    pub in_dim: usize,
    /// Number of neurons of the unpruned output, `U`.
    pub out_dim: usize,
    pub q_in: u8,
    pub codebooks: Vec<Codebook>,
    pub luts: QuantizedLutSet,
    /// Per-slot bias in accumulator units (already includes `N · offset / scale`).
    pub bias: Vec<i32>,
    /// `None` for the read-out layer, which emits raw accumulators.
    pub thresholds: Option<ThresholdSet>,
    pub partition: PartitionConfig,
}

impl AmuLayer {
    pub fn validate(&self) -> Result<()> {
        let s = self.shape;
        let err = |m: String| Err(AmuError::config(m));
        if self.codebooks.len() != s.n_codebooks {
            return err(format!("{} codebooks for N = {}", self.codebooks.len(), s.n_codebooks));
        }
        if s.n_codebooks == 0 || self.in_dim % s.n_codebooks != 0 {
            return err(format!("N = {} does not divide input width {}", s.n_codebooks, self.in_dim));
        }
        let sub_dim = self.in_dim / s.n_codebooks;
        for (c, cb) in self.codebooks.iter().enumerate() {
            if cb.slice != c || cb.tree.n_levels() != s.i_levels || cb.sub_dim() != sub_dim {
                return err(format!("codebook {c} does not match I = {}, sub_dim = {sub_dim}", s.i_levels));
            }
            if cb.tree.split_indexes.iter().any(|&d| d >= sub_dim) {
                return err(format!("codebook {c} splits outside its subspace"));
            }
            if cb.prototypes.rows() != cb.tree.n_leaves() {
                return err(format!("codebook {c} has {} prototypes", cb.prototypes.rows()));
            }
        }
        if self.luts.n_rows != 1 << s.i_levels || self.luts.n_cols != s.n_codebooks {
            return err(format!("tables are {}x{}, expected {}x{}", self.luts.n_rows, self.luts.n_cols, 1 << s.i_levels, s.n_codebooks));
        }
        let slots = s.lut_count();
        if self.luts.n_tables() != slots || self.luts.tables.len() != slots * self.luts.n_rows * self.luts.n_cols {
            return err(format!("{} tables for O×M = {slots}", self.luts.n_tables()));
        }
        if let Some(&bad) = self.luts.kept_positions.iter().find(|&&u| u >= self.out_dim) {
            return err(format!("output position {bad} outside [0, {})", self.out_dim));
        }
        if self.bias.len() != slots {
            return err(format!("{} biases for {slots} slots", self.bias.len()));
        }
        if let Some(t) = &self.thresholds {
            if t.len() != slots {
                return err(format!("{} threshold vectors for {slots} slots", t.len()));
            }
        }
        if !(1..=16).contains(&self.q_in) {
            return err(format!("input block width {} outside [1, 16]", self.q_in));
        }
        let max_acc = i64::from(u8::MAX) * s.n_codebooks as i64
            + self.bias.iter().map(|b| i64::from(b.unsigned_abs())).max().unwrap_or(0);
        if max_acc > i64::from(i32::MAX) {
            return err("accumulator range exceeds 32 bits".into());
        }
        self.partition.validate(s.n_codebooks, s.m_codebooks_out)
    }

    pub fn sub_dim(&self) -> usize {
        self.in_dim / self.shape.n_codebooks
    }

    pub fn is_readout(&self) -> bool {
        self.thresholds.is_none()
    }

    pub fn q_out(&self) -> Option<u8> {
        self.thresholds.as_ref().map(|t| t.q_bits)
    }

    pub fn output_position_map(&self) -> &[usize] {
        &self.luts.kept_positions
    }

    /// Smallest signed width holding every possible accumulator (at least 16).
    pub fn accumulator_bits(&self) -> u32 {
        let max_acc = i64::from(u8::MAX) * self.shape.n_codebooks as i64
            + self.bias.iter().map(|b| i64::from(b.unsigned_abs())).max().unwrap_or(0);
        (65 - max_acc.leading_zeros()).max(16)
    }

    fn check_packet(&self, packet: &FeaturePacket) -> Result<BlockGrid> {
        if packet.n_packages != self.shape.i_levels
            || packet.blocks_per_package != self.shape.n_codebooks
            || packet.q_bits != self.q_in
        {
            return Err(AmuError::config(format!(
                "packet is {}x{} at {} bits, layer expects {}x{} at {} bits",
                packet.n_packages,
                packet.blocks_per_package,
                packet.q_bits,
                self.shape.i_levels,
                self.shape.n_codebooks,
                self.q_in
            )));
        }
        packet.unpack()
    }

    /// Prototype id of every codebook; package `p` feeds round `p` of each encoder.
    pub fn encode_grid(&self, grid: &BlockGrid) -> Vec<usize> {
        let mut blocks = vec![0u32; self.shape.i_levels];
        self.codebooks
            .iter()
            .enumerate()
            .map(|(c, cb)| {
                for (p, b) in blocks.iter_mut().enumerate() {
                    *b = grid.get(p, c);
                }
                encode(cb, &blocks)
            })
            .collect()
    }

    /// Integer accumulators of every output slot (before thresholding).
    pub fn accumulate(&self, packet: &FeaturePacket) -> Result<Vec<i32>> {
        let grid = self.check_packet(packet)?;
        let ids = self.encode_grid(&grid);
        Ok(aggregate(&ids, &self.luts, &self.bias))
    }
}

/// Prototype id selected by one codebook for its `I` blocks, in level order.
#[inline]
pub fn encode(codebook: &Codebook, blocks: &[u32]) -> usize {
    codebook.tree.encode(blocks)
}

/// `acc[t] = Σ_c table_t[ids[c]][c] + bias[t]` over all tables.
pub fn aggregate(ids: &[usize], luts: &QuantizedLutSet, bias: &[i32]) -> Vec<i32> {
    let n = luts.n_cols;
    debug_assert_eq!(ids.len(), n);
    (0..luts.n_tables())
        .map(|t| {
            let table = luts.table(t);
            let sum: i32 = ids.iter().enumerate().map(|(c, &id)| i32::from(table[id * n + c])).sum();
            sum + bias[t]
        })
        .collect()
}

/// Successive thresholding of every accumulator.
pub fn threshold_quantize(accumulators: &[i32], thresholds: &ThresholdSet) -> Vec<u32> {
    accumulators.iter().enumerate().map(|(slot, &acc)| thresholds.quantize(slot, f64::from(acc))).collect()
}

/// Full layer step: unpack, encode, aggregate, threshold and pack the `O`
/// output packages of `M` blocks.
pub fn amu_forward(layer: &AmuLayer, packet_in: &FeaturePacket) -> Result<FeaturePacket> {
    let thresholds = layer
        .thresholds
        .as_ref()
        .ok_or_else(|| AmuError::config("read-out layer has no thresholds; use AmuLayer::accumulate"))?;
    let acc = layer.accumulate(packet_in)?;
    let codes = threshold_quantize(&acc, thresholds);
    FeaturePacket::pack(layer.shape.o_packages, layer.shape.m_codebooks_out, thresholds.q_bits, &codes)
}
