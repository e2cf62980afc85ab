//! Cascaded network: a front end that produces the first packet, a chain of
//! AMU layers, and a read-out layer whose raw accumulators are the scores.

use super::layer::{amu_forward, AmuLayer};
use super::packet::FeaturePacket;
use super::pruning::compute_pruned_positions;
use crate::cost::{amu_cost_with, CostReport};
use crate::error::{AmuError, Result};
use crate::matrix::{gemm_into, DenseMatrix};
use crate::model_io::mlp::{argmax, Activation, DenseLayer};
use crate::train::ThresholdSet;

/// Bit width of pixel blocks fed straight into a first AMU layer.
pub const PIXEL_BITS: u8 = 8;

/// How the first packet is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum FrontEnd {
    /// Real-arithmetic layers. Every layer but the last applies its
    /// activation; the last one's pre-activation is thresholded at the first
    /// AMU layer's kept positions (slot order) and packed.
    Exact { layers: Vec<DenseLayer>, thresholds: ThresholdSet },
    /// Input values in `[0, 1]` become `round(255·x)` blocks. The input is
    /// zero padded up to the first AMU layer's width.
    Pixels { input_dim: usize },
}

impl FrontEnd {
    pub fn input_dim(&self) -> usize {
        match self {
            FrontEnd::Exact { layers, .. } => layers[0].in_dim(),
            FrontEnd::Pixels { input_dim } => *input_dim,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, FrontEnd::Exact { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmuNetwork {
    pub front: FrontEnd,
    /// Hidden AMU layers followed by the read-out layer.
    pub layers: Vec<AmuLayer>,
}

/// Network output for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub scores: Vec<i32>,
    pub label: usize,
}

impl AmuNetwork {
    /// Checks every chaining rule and builds the network.
    pub fn new(front: FrontEnd, layers: Vec<AmuLayer>) -> Result<Self> {
        let net = AmuNetwork { front, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(AmuError::config(m));
        let Some(first) = self.layers.first() else {
            return err("network needs at least one AMU layer".into());
        };
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate().map_err(|e| AmuError::config(format!("layer {i}: {e}")))?;
        }
        let first_positions = compute_pruned_positions(&first.codebooks)?;
        match &self.front {
            FrontEnd::Exact { layers, thresholds } => {
                if layers.is_empty() {
                    return err("exact front needs at least one layer".into());
                }
                for (i, pair) in layers.windows(2).enumerate() {
                    if pair[0].out_dim() != pair[1].in_dim() {
                        return err(format!("exact layers {i} and {} do not chain", i + 1));
                    }
                }
                for (i, l) in layers.iter().enumerate() {
                    if l.bias.len() != l.out_dim() {
                        return err(format!("exact layer {i} bias length {}", l.bias.len()));
                    }
                }
                let last = layers.last().expect("non-empty");
                if last.out_dim() != first.in_dim {
                    return err(format!("exact front emits {} values, first AMU layer reads {}", last.out_dim(), first.in_dim));
                }
                if thresholds.len() != first_positions.len() || thresholds.q_bits != first.q_in {
                    return err(format!(
                        "front thresholds: {} positions at {} bits, first AMU layer needs {} at {}",
                        thresholds.len(),
                        thresholds.q_bits,
                        first_positions.len(),
                        first.q_in
                    ));
                }
            }
            FrontEnd::Pixels { input_dim } => {
                if *input_dim == 0 || *input_dim > first.in_dim {
                    return err(format!("pixel input of {input_dim} values does not fit width {}", first.in_dim));
                }
                if first.q_in != PIXEL_BITS {
                    return err(format!("pixel front needs {PIXEL_BITS}-bit blocks, first layer takes {}", first.q_in));
                }
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            let (cur, next) = (&pair[0], &pair[1]);
            if cur.is_readout() {
                return err(format!("layer {i} has no thresholds but is not last"));
            }
            if cur.shape.o_packages != next.shape.i_levels || cur.shape.m_codebooks_out != next.shape.n_codebooks {
                return err(format!(
                    "layer {i} emits {}x{} blocks, layer {} reads {}x{}",
                    cur.shape.o_packages,
                    cur.shape.m_codebooks_out,
                    i + 1,
                    next.shape.i_levels,
                    next.shape.n_codebooks
                ));
            }
            if cur.q_out() != Some(next.q_in) || cur.out_dim != next.in_dim {
                return err(format!("layer {i} output does not match layer {} input", i + 1));
            }
            if compute_pruned_positions(&next.codebooks)? != cur.luts.kept_positions {
                return err(format!("layer {i} keeps positions that layer {} does not read", i + 1));
            }
        }
        let last = self.layers.last().expect("non-empty");
        if !last.is_readout() || last.shape.m_codebooks_out != 1 {
            return err("last layer must be a read-out (M = 1, no thresholds)".into());
        }
        if last.luts.kept_positions != (0..last.shape.o_packages).collect::<Vec<_>>() {
            return err("read-out layer must emit every class in order".into());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.front.input_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.shape.o_packages)
    }

    /// First packet for a batch of samples (one packet per row).
    pub fn front_packets(&self, samples: &DenseMatrix) -> Result<Vec<FeaturePacket>> {
        if samples.cols() != self.input_dim() {
            return Err(AmuError::config(format!(
                "sample has {} values, network expects {}",
                samples.cols(),
                self.input_dim()
            )));
        }
        let first = &self.layers[0];
        let positions = compute_pruned_positions(&first.codebooks)?;
        let (i, n) = (first.shape.i_levels, first.shape.n_codebooks);
        match &self.front {
            FrontEnd::Exact { layers, thresholds } => {
                let kept = exact_prefix_at(layers, samples, &positions);
                kept.iter_rows()
                    .map(|row| {
                        let codes: Vec<u32> = row.iter().enumerate().map(|(s, &v)| thresholds.quantize(s, v)).collect();
                        FeaturePacket::pack(i, n, thresholds.q_bits, &codes)
                    })
                    .collect()
            }
            FrontEnd::Pixels { input_dim } => samples
                .iter_rows()
                .map(|row| {
                    let codes: Vec<u32> =
                        positions.iter().map(|&p| if p < *input_dim { pixel_code(row[p]) } else { 0 }).collect();
                    FeaturePacket::pack(i, n, PIXEL_BITS, &codes)
                })
                .collect(),
        }
    }

    /// Runs the AMU chain on a first packet and returns the read-out scores.
    pub fn forward_packet(&self, packet: &FeaturePacket) -> Result<Prediction> {
        let (hidden, readout) = self.layers.split_at(self.layers.len() - 1);
        let mut p = packet.clone();
        for layer in hidden {
            p = amu_forward(layer, &p)?;
        }
        let scores = readout[0].accumulate(&p)?;
        let label = argmax(&scores);
        Ok(Prediction { scores, label })
    }

    pub fn forward_batch(&self, samples: &DenseMatrix) -> Result<Vec<Prediction>> {
        self.front_packets(samples)?.iter().map(|p| self.forward_packet(p)).collect()
    }

    /// Fraction of rows whose predicted label matches.
    pub fn accuracy(&self, samples: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        if samples.rows() == 0 {
            return Err(AmuError::config("cannot evaluate on an empty dataset"));
        }
        let mut correct = 0usize;
        for start in (0..samples.rows()).step_by(2048) {
            let idx: Vec<usize> = (start..(start + 2048).min(samples.rows())).collect();
            let preds = self.forward_batch(&samples.select_rows(&idx))?;
            correct += preds.iter().zip(&labels[start..]).filter(|(p, &l)| p.label == l).count();
        }
        Ok(correct as f64 / samples.rows() as f64)
    }

    /// Cost report of every AMU layer.
    pub fn cost(&self, alpha: u64, clock_hz: f64, strict: bool) -> Result<Vec<CostReport>> {
        self.layers.iter().map(|l| amu_cost_with(l.shape, l.partition, alpha, clock_hz, strict)).collect()
    }
}

#[inline]
fn pixel_code(x: f64) -> u32 {
    (x * 255.0).round().clamp(0.0, 255.0) as u32
}

/// Runs the exact layers and returns the last layer's pre-activation at
/// `positions` only, one row per sample.
fn exact_prefix_at(layers: &[DenseLayer], samples: &DenseMatrix, positions: &[usize]) -> DenseMatrix {
    let (body, last) = layers.split_at(layers.len() - 1);
    let last = &last[0];
    let mut h = samples.clone();
    for layer in body {
        let mut z = DenseMatrix::zeros(h.rows(), layer.out_dim());
        for r in 0..z.rows() {
            z.row_mut(r).copy_from_slice(&layer.bias);
        }
        gemm_into(&h, false, &layer.weights, false, &mut z, 1.0);
        if layer.activation == Activation::Relu {
            z.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
        }
        h = z;
    }
    let mut out = DenseMatrix::zeros(h.rows(), positions.len());
    for (r, row) in h.iter_rows().enumerate() {
        for (s, &p) in positions.iter().enumerate() {
            let mut acc = last.bias[p];
            for (k, &a) in row.iter().enumerate() {
                acc += a * last.weights[(k, p)];
            }
            out[(r, s)] = acc;
        }
    }
    out
}

/// Threshold-quantizes `exact_outputs` at the next layer's kept positions and
/// packs them package-major. `thresholds` holds one vector per slot.
pub fn packetize_front(exact_outputs: &[f64], next_layer: &AmuLayer, thresholds: &ThresholdSet) -> Result<FeaturePacket> {
    if exact_outputs.len() != next_layer.in_dim {
        return Err(AmuError::config(format!(
            "{} exact outputs for a layer reading {}",
            exact_outputs.len(),
            next_layer.in_dim
        )));
    }
    let positions = compute_pruned_positions(&next_layer.codebooks)?;
    if thresholds.len() != positions.len() {
        return Err(AmuError::config(format!("{} threshold vectors for {} slots", thresholds.len(), positions.len())));
    }
    let codes: Vec<u32> = positions.iter().enumerate().map(|(s, &p)| thresholds.quantize(s, exact_outputs[p])).collect();
    FeaturePacket::pack(next_layer.shape.i_levels, next_layer.shape.n_codebooks, thresholds.q_bits, &codes)
}

/// Forward pass of one sample.
pub fn network_forward(network: &AmuNetwork, sample: &[f64]) -> Result<Prediction> {
    let m = DenseMatrix::from_vec(1, sample.len(), sample.to_vec())?;
    let packet = network.front_packets(&m)?.pop().expect("one row");
    network.forward_packet(&packet)
}
