//! Turns a trained MLP into an AMU network.
//!
//! Layers are fitted front to back on the codes each layer will actually
//! receive at inference time. For every AMU layer:
//!
//! 1. Input codes are mapped back to reals. A code of an exact or AMU layer
//!    stands for the mean ReLU activation of the training values that fell
//!    into its threshold bin; a pixel code `c` stands for `c / 255`.
//! 2. Trees and prototypes are learned on those reals, prototypes are fixed
//!    (leaf means, or optionally a joint ridge solve), and tables are built
//!    for every output neuron.
//! 3. Split values are moved into the code domain: a real split `v` becomes
//!    the largest code whose real value is `≤ v` (or −1), which routes every
//!    code exactly as its real value was routed during training.
//! 4. Tables are quantized with one affine map, biases are folded into
//!    accumulator units and thresholds are calibrated on the resulting
//!    integer accumulators of the training samples.
//!
//! The full-width result is then pruned down to what the next layer reads.

use crate::baselines::{UnprunedFront, UnprunedLayer, UnprunedNetwork};
use crate::cost::PartitionConfig;
use crate::error::{AmuError, Result};
use crate::matrix::{gemm_into, DenseMatrix};
use crate::model_io::mlp::{Activation, MlpModel};
use crate::runtime::{AmuNetwork, PIXEL_BITS};
use crate::train::{
    assign_buckets, build_luts, calibrate_thresholds, leaf_means, learn_codebooks, quantize_luts, refine_prototypes_ridge_to,
    SubspaceLayout,
};

/// Default ridge strength for prototype refinement.
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// How prototypes are finalised after the trees are learned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrototypeFit {
    /// Per-leaf means of the training sub-vectors.
    LeafMeans,
    /// Joint ridge regression over all codebooks, cut back to each slice.
    JointRidge,
}

impl PrototypeFit {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "means" => Ok(PrototypeFit::LeafMeans),
            "ridge" => Ok(PrototypeFit::JointRidge),
            _ => Err(AmuError::config(format!("unknown prototype fit '{text}' (expected means or ridge)"))),
        }
    }
}

/// What the prototypes and dequantization levels of a layer average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitTargets {
    /// The layer's own dequantized inputs, as produced by the AMU layers before it.
    Observed,
    /// The reference MLP's real activations at that layer, grouped by the
    /// codes and leaves the AMU chain actually produces.
    Reference,
}

impl FitTargets {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "observed" => Ok(FitTargets::Observed),
            "reference" => Ok(FitTargets::Reference),
            _ => Err(AmuError::config(format!("unknown fit target '{text}' (expected observed or reference)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FirstLayer {
    /// The first `n` MLP layers run in real arithmetic.
    Exact(usize),
    /// Every MLP layer becomes an AMU layer fed with 8-bit pixels.
    Amu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub first_layer: FirstLayer,
    /// `(I, N)` of every AMU layer, read-out last.
    pub amu_layers: Vec<(usize, usize)>,
    /// Width of activation codes between layers.
    pub q_bits: u8,
    pub prototypes: PrototypeFit,
    pub targets: FitTargets,
    pub lambda: f64,
    pub partition: PartitionConfig,
    /// Training rows used for fitting (the first ones).
    pub max_samples: usize,
}

impl FitConfig {
    pub fn new(first_layer: FirstLayer, amu_layers: Vec<(usize, usize)>, q_bits: u8) -> Self {
        FitConfig {
            first_layer,
            amu_layers,
            q_bits,
            prototypes: PrototypeFit::LeafMeans,
            targets: FitTargets::Reference,
            lambda: DEFAULT_LAMBDA,
            partition: PartitionConfig::Complete,
            max_samples: 10_000,
        }
    }

    fn n_exact(&self) -> usize {
        match self.first_layer {
            FirstLayer::Exact(n) => n,
            FirstLayer::Amu => 0,
        }
    }

    /// Checks the configuration against the MLP's layer widths.
    pub fn validate(&self, mlp: &MlpModel) -> Result<()> {
        let n_exact = self.n_exact();
        if let FirstLayer::Exact(0) = self.first_layer {
            return Err(AmuError::config("an exact front needs at least one layer"));
        }
        let n_layers = mlp.layers.len();
        if n_exact + self.amu_layers.len() != n_layers {
            return Err(AmuError::config(format!(
                "MLP has {n_layers} layers: {n_exact} exact + {} AMU layers given",
                self.amu_layers.len()
            )));
        }
        if !(1..=16).contains(&self.q_bits) {
            return Err(AmuError::config(format!("activation width {} outside [1, 16]", self.q_bits)));
        }
        if !(self.lambda >= 0.0) {
            return Err(AmuError::config("lambda must be >= 0"));
        }
        if self.max_samples == 0 {
            return Err(AmuError::config("need at least one fitting sample"));
        }
        for (j, &(i, n)) in self.amu_layers.iter().enumerate() {
            let li = n_exact + j;
            let in_dim = mlp.layers[li].in_dim();
            if !(1..=12).contains(&i) || n == 0 {
                return Err(AmuError::config(format!("layer {li}: (I, N) = ({i}, {n}) out of range")));
            }
            let padded = j == 0 && self.first_layer == FirstLayer::Amu;
            if !padded && in_dim % n != 0 {
                return Err(AmuError::config(format!("layer {li}: N = {n} does not divide its input width {in_dim}")));
            }
            if n > in_dim {
                return Err(AmuError::config(format!("layer {li}: N = {n} exceeds its input width {in_dim}")));
            }
            let m = self.amu_layers.get(j + 1).map_or(1, |&(_, m)| m);
            self.partition.validate(n, m).map_err(|e| AmuError::config(format!("layer {li}: {e}")))?;
        }
        Ok(())
    }
}

/// Row-major matrix of codes.
struct Codes {
    cols: usize,
    data: Vec<u32>,
}

impl Codes {
    fn row(&self, r: usize) -> &[u32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `levels[p][c]`: mean of `real[., p]` (after ReLU) over rows whose code at
/// `p` is `c`. Empty bins copy the nearest lower bin, or the nearest higher
/// one when no lower bin exists.
fn dequant_levels(real: impl Fn(usize, usize) -> f64, codes: &Codes, n_rows: usize, q_bits: u8) -> Vec<Vec<f64>> {
    let n_codes = 1usize << q_bits;
    let mut sums = vec![vec![0.0; n_codes]; codes.cols];
    let mut counts = vec![vec![0usize; n_codes]; codes.cols];
    for r in 0..n_rows {
        for (p, &c) in codes.row(r).iter().enumerate() {
            sums[p][c as usize] += real(r, p).max(0.0);
            counts[p][c as usize] += 1;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| {
            let mut lv: Vec<Option<f64>> = s.iter().zip(&n).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect();
            let first = lv.iter().flatten().next().copied().unwrap_or(0.0);
            let mut prev = first;
            for v in lv.iter_mut() {
                prev = *v.get_or_insert(prev);
            }
            lv.into_iter().map(|v| v.expect("filled")).collect()
        })
        .collect()
}

/// Largest code whose level is `≤ v`, or −1.
fn code_split(levels: &[f64], v: f64) -> f64 {
    levels.partition_point(|&l| l <= v) as f64 - 1.0
}

fn dequantize(codes: &Codes, levels: &[Vec<f64>], n_rows: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(n_rows, codes.cols);
    for r in 0..n_rows {
        for ((o, &c), lv) in out.row_mut(r).iter_mut().zip(codes.row(r)).zip(levels) {
            *o = lv[c as usize];
        }
    }
    out
}

/// A fitted network in both full-width and pruned form.
#[derive(Clone, Debug)]
pub struct FittedNetwork {
    pub unpruned: UnprunedNetwork,
    pub network: AmuNetwork,
}

/// Fits AMU layers to `mlp` using the first `cfg.max_samples` rows of
/// `samples` (the MLP's training inputs).
pub fn fit_amu_network(mlp: &MlpModel, samples: &DenseMatrix, cfg: &FitConfig) -> Result<FittedNetwork> {
    cfg.validate(mlp)?;
    if samples.cols() != mlp.input_dim() {
        return Err(AmuError::config(format!("samples have {} columns, MLP expects {}", samples.cols(), mlp.input_dim())));
    }
    let n = samples.rows().min(cfg.max_samples);
    if n == 0 {
        return Err(AmuError::config("no fitting samples"));
    }
    let x = samples.select_rows(&(0..n).collect::<Vec<_>>());
    let n_exact = cfg.n_exact();

    let (front, mut codes, mut levels) = if n_exact > 0 {
        let z = exact_pre_activation(mlp, n_exact, &x);
        let t = calibrate_thresholds(&z, cfg.q_bits)?;
        let codes = Codes {
            cols: z.cols(),
            data: z.iter_rows().flat_map(|row| row.iter().enumerate().map(|(p, &v)| t.quantize(p, v))).collect(),
        };
        let levels = dequant_levels(|r, p| z[(r, p)], &codes, n, cfg.q_bits);
        let front = UnprunedFront::Exact { layers: mlp.layers[..n_exact].to_vec(), thresholds: t };
        (front, codes, levels)
    } else {
        let n0 = cfg.amu_layers[0].1;
        let width = x.cols().div_ceil(n0) * n0;
        let mut data = vec![0u32; n * width];
        for r in 0..n {
            for (d, &v) in data[r * width..].iter_mut().zip(x.row(r)) {
                *d = (v * 255.0).round().clamp(0.0, 255.0) as u32;
            }
        }
        let pixel_levels: Vec<f64> = (0..256).map(|c| f64::from(c) / 255.0).collect();
        (UnprunedFront::Pixels { input_dim: x.cols() }, Codes { cols: width, data }, vec![pixel_levels; width])
    };

    // reference activations entering every AMU layer
    let reference: Option<Vec<DenseMatrix>> = (cfg.targets == FitTargets::Reference).then(|| {
        let z = mlp.pre_activations(&x);
        (0..cfg.amu_layers.len())
            .map(|j| {
                let li = n_exact + j;
                if li == 0 {
                    x.clone()
                } else {
                    let mut h = z[li - 1].clone();
                    h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                    h
                }
            })
            .collect()
    });

    let mut layers = Vec::with_capacity(cfg.amu_layers.len());
    for (j, &(i_levels, n_cb)) in cfg.amu_layers.iter().enumerate() {
        let dense = &mlp.layers[n_exact + j];
        let is_last = j + 1 == cfg.amu_layers.len();
        let q_in = if n_exact == 0 && j == 0 { PIXEL_BITS } else { cfg.q_bits };
        let width = codes.cols;
        let weights = dense.weights.pad_rows(width);
        let u = dense.out_dim();

        let d = dequantize(&codes, &levels, n);
        let layout = SubspaceLayout::new(width, n_cb)?;
        let mut codebooks = learn_codebooks(&d, layout, i_levels)?;
        let target = match &reference {
            Some(r) => r[j].pad_cols(width),
            None => d.clone(),
        };
        match cfg.prototypes {
            PrototypeFit::JointRidge => {
                refine_prototypes_ridge_to(&mut codebooks, &d, &target, cfg.lambda)?;
            }
            PrototypeFit::LeafMeans if reference.is_some() => {
                for cb in codebooks.iter_mut() {
                    let start = layout.slice_start(cb.slice);
                    let leaves = assign_buckets(&cb.tree, &d.column_slice(start, layout.sub_dim));
                    cb.prototypes = leaf_means(cb.tree.n_leaves(), &leaves, &target.column_slice(start, layout.sub_dim));
                }
            }
            PrototypeFit::LeafMeans => {}
        }
        drop(d);
        drop(target);
        let real = build_luts(&codebooks, &weights, &(0..u).collect::<Vec<_>>())?;
        let sub = layout.sub_dim;
        for cb in codebooks.iter_mut() {
            let base = cb.slice * sub;
            cb.tree = cb.tree.map_split_values(|dim, v| code_split(&levels[base + dim], v));
        }
        let luts = quantize_luts(&real);
        drop(real);
        let bias = dense
            .bias
            .iter()
            .map(|&b| {
                let v = ((b + n_cb as f64 * luts.offset) / luts.scale).round();
                if v.abs() > f64::from(i32::MAX / 2) {
                    return Err(AmuError::Numeric(format!("layer {}: bias {b} overflows the accumulator", n_exact + j)));
                }
                Ok(v as i32)
            })
            .collect::<Result<Vec<i32>>>()?;

        // integer accumulators of every training row
        let mut acc = vec![0i32; n * u];
        let mut blocks = vec![0u32; i_levels];
        let mut ids = vec![0usize; n_cb];
        for r in 0..n {
            let row = codes.row(r);
            for (c, cb) in codebooks.iter().enumerate() {
                let base = c * sub;
                for (b, &dim) in blocks.iter_mut().zip(&cb.tree.split_indexes) {
                    *b = row[base + dim];
                }
                ids[c] = cb.tree.encode(&blocks);
            }
            let out = &mut acc[r * u..(r + 1) * u];
            for (t, o) in out.iter_mut().enumerate() {
                let table = luts.table(t);
                *o = bias[t] + ids.iter().enumerate().map(|(c, &id)| i32::from(table[id * n_cb + c])).sum::<i32>();
            }
        }

        let thresholds = if is_last {
            None
        } else {
            let acc_real = DenseMatrix::from_vec(n, u, acc.iter().map(|&a| f64::from(a)).collect())?;
            let t = calibrate_thresholds(&acc_real, cfg.q_bits)?;
            let next = Codes {
                cols: u,
                data: acc.iter().enumerate().map(|(k, &a)| t.quantize(k % u, f64::from(a))).collect(),
            };
            let scale = luts.scale;
            levels = match &reference {
                Some(r) => dequant_levels(|row, p| r[j + 1][(row, p)], &next, n, cfg.q_bits),
                None => dequant_levels(|row, p| f64::from(acc[row * u + p]) * scale, &next, n, cfg.q_bits),
            };
            codes = next;
            Some(t)
        };
        let m_next = cfg.amu_layers.get(j + 1).map_or(1, |&(_, m)| m);
        let partition = match cfg.partition {
            PartitionConfig::Group { s, e } if s * e > n_cb * m_next => PartitionConfig::Complete,
            p => p,
        };
        layers.push(UnprunedLayer { i_levels, in_dim: width, q_in, codebooks, luts, bias, thresholds, partition });
    }
    let unpruned = UnprunedNetwork { front, layers };
    let network = unpruned.prune()?;
    Ok(FittedNetwork { unpruned, network })
}

/// Pre-activation of exact layer `n_exact − 1` (earlier layers activated).
fn exact_pre_activation(mlp: &MlpModel, n_exact: usize, x: &DenseMatrix) -> DenseMatrix {
    let mut h = x.clone();
    for (i, layer) in mlp.layers[..n_exact].iter().enumerate() {
        let mut z = DenseMatrix::zeros(h.rows(), layer.out_dim());
        for r in 0..z.rows() {
            z.row_mut(r).copy_from_slice(&layer.bias);
        }
        gemm_into(&h, false, &layer.weights, false, &mut z, 1.0);
        if i + 1 < n_exact && layer.activation == Activation::Relu {
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = z;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::idx::LabeledDataset;
    use crate::model_io::mlp::train_reference_mlp;
    use crate::model_io::synth::generate_gaussian_mixture_labeled;

    fn toy() -> (LabeledDataset, MlpModel) {
        let mix = generate_gaussian_mixture_labeled(600, 16, 4, 3.0, 5);
        let data = LabeledDataset::new(mix.samples, mix.cluster_ids, 4).unwrap();
        let mlp = train_reference_mlp(&data, &[16, 16, 4], 5, 1).unwrap();
        (data, mlp)
    }

    #[test]
    fn code_split_routes_like_levels() {
        let levels = [0.0, 0.0, 0.5, 2.0];
        for v in [-1.0, 0.0, 0.25, 0.5, 1.0, 3.0] {
            let k = code_split(&levels, v);
            for (c, &l) in levels.iter().enumerate() {
                assert_eq!(c as f64 > k, l > v, "v = {v}, c = {c}");
            }
        }
    }

    #[test]
    fn empty_bins_copy_neighbours() {
        let codes = Codes { cols: 1, data: vec![1, 1, 3] };
        let vals = [2.0, 4.0, 7.0];
        let lv = dequant_levels(|r, _| vals[r], &codes, 3, 2);
        assert_eq!(lv[0], vec![3.0, 3.0, 3.0, 7.0]);
    }

    #[test]
    fn fitted_layers_have_o_times_m_tables() {
        let (data, mlp) = toy();
        let cfg = FitConfig::new(FirstLayer::Amu, vec![(3, 4), (2, 4)], 2);
        let fit = fit_amu_network(&mlp, &data.samples, &cfg).unwrap();
        assert_eq!(fit.network.layers[0].luts.n_tables(), 2 * 4);
        assert_eq!(fit.network.layers[1].luts.n_tables(), 4);
        let acc = fit.network.accuracy(&data.samples, &data.labels).unwrap();
        assert!(acc > 0.5, "accuracy {acc}");
    }

    #[test]
    fn refit_is_deterministic() {
        let (data, mlp) = toy();
        let cfg = FitConfig::new(FirstLayer::Exact(1), vec![(2, 4)], 2);
        let a = fit_amu_network(&mlp, &data.samples, &cfg).unwrap();
        let b = fit_amu_network(&mlp, &data.samples, &cfg).unwrap();
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn both_targets_fit_and_differ_only_in_values() {
        let (data, mlp) = toy();
        let mut cfg = FitConfig::new(FirstLayer::Exact(1), vec![(2, 4)], 2);
        cfg.targets = FitTargets::Observed;
        let observed = fit_amu_network(&mlp, &data.samples, &cfg).unwrap();
        cfg.targets = FitTargets::Reference;
        let reference = fit_amu_network(&mlp, &data.samples, &cfg).unwrap();
        let (a, b) = (&observed.network.layers[0], &reference.network.layers[0]);
        assert_eq!(a.shape, b.shape);
        assert_eq!(a.luts.n_tables(), b.luts.n_tables());
        assert!(FitTargets::parse("reference").is_ok() && FitTargets::parse("other").is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let (data, mlp) = toy();
        let bad_n = FitConfig::new(FirstLayer::Exact(1), vec![(2, 5)], 2);
        assert!(matches!(fit_amu_network(&mlp, &data.samples, &bad_n), Err(AmuError::Config(_))));
        let bad_count = FitConfig::new(FirstLayer::Exact(1), vec![(2, 4), (2, 4)], 2);
        assert!(fit_amu_network(&mlp, &data.samples, &bad_count).is_err());
    }
}
