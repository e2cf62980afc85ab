//! Reference implementations used as oracles.
//!
//! Everything here is written the slow, obvious way (triple loops, pointer
//! trees, full-width layers) and shares no inner loops with the runtime.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cost::{LayerShape, PartitionConfig};
use crate::error::{AmuError, Result};
use crate::matrix::DenseMatrix;
use crate::model_io::mlp::{Activation, DenseLayer};
use crate::runtime::im2col::{ConvGeometry, TensorShape};
use crate::runtime::{compute_pruned_positions, AmuLayer, AmuNetwork, FrontEnd};
use crate::train::{Codebook, QuantizedLutSet, RealLuts, SplitTree, ThresholdSet};

/// Triple-loop product `a · w`.
pub fn exact_gemm(a: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != w.rows() {
        return Err(AmuError::config(format!("cannot multiply {:?} by {:?}", a.shape(), w.shape())));
    }
    let mut out = DenseMatrix::zeros(a.rows(), w.cols());
    for i in 0..a.rows() {
        for j in 0..w.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a[(i, k)] * w[(k, j)];
            }
            out[(i, j)] = s;
        }
    }
    Ok(out)
}

/// Pointer-based binary tree rebuilt from a heap, with leaves numbered left
/// to right.
#[derive(Debug)]
pub enum TreeNode {
    Leaf(usize),
    Split { dim: usize, value: f64, left: Box<TreeNode>, right: Box<TreeNode> },
}

impl TreeNode {
    pub fn from_split_tree(tree: &SplitTree) -> TreeNode {
        fn build(tree: &SplitTree, level: usize, bucket: usize, next_leaf: &mut usize) -> TreeNode {
            if level == tree.n_levels() {
                let id = *next_leaf;
                *next_leaf += 1;
                return TreeNode::Leaf(id);
            }
            let left = build(tree, level + 1, 2 * bucket, next_leaf);
            let right = build(tree, level + 1, 2 * bucket + 1, next_leaf);
            TreeNode::Split {
                dim: tree.split_indexes[level],
                value: tree.split_value(level, bucket),
                left: Box::new(left),
                right: Box::new(right),
            }
        }
        build(tree, 0, 0, &mut 0)
    }

    /// Descends with `x ≤ value → left`.
    pub fn descend(&self, x: &[f64]) -> usize {
        match self {
            TreeNode::Leaf(id) => *id,
            TreeNode::Split { dim, value, left, right } => {
                if x[*dim] <= *value {
                    left.descend(x)
                } else {
                    right.descend(x)
                }
            }
        }
    }
}

/// Leaf reached by `sub_vector` through a recursive walk of `tree`.
pub fn recursive_encode(tree: &SplitTree, sub_vector: &[f64]) -> usize {
    TreeNode::from_split_tree(tree).descend(sub_vector)
}

/// Unpruned, unquantized MADDNESS: one table per output neuron, every
/// neuron computed. `luts.positions[t]` names the neuron of table `t`.
pub fn naive_maddness_forward(codebooks: &[Codebook], luts: &RealLuts, input: &[f64]) -> Vec<f64> {
    let ids: Vec<usize> = codebooks
        .iter()
        .map(|cb| {
            let w = cb.sub_dim();
            recursive_encode(&cb.tree, &input[cb.slice * w..(cb.slice + 1) * w])
        })
        .collect();
    let width = luts.positions.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![0.0; width];
    for (t, &u) in luts.positions.iter().enumerate() {
        for (c, &id) in ids.iter().enumerate() {
            out[u] += luts.tables[t][(id, c)];
        }
    }
    out
}

/// Distance between an approximation and its reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorReport {
    pub frobenius_abs: f64,
    /// `None` when the reference is all zeros.
    pub frobenius_rel: Option<f64>,
    pub max_abs: f64,
}

pub fn approximation_error(approx: &DenseMatrix, exact: &DenseMatrix) -> Result<ErrorReport> {
    if approx.shape() != exact.shape() {
        return Err(AmuError::config(format!("shapes {:?} and {:?} differ", approx.shape(), exact.shape())));
    }
    let mut sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for (a, e) in approx.as_slice().iter().zip(exact.as_slice()) {
        let d = a - e;
        sq += d * d;
        max_abs = max_abs.max(d.abs());
    }
    let frobenius_abs = sq.sqrt();
    let norm = exact.frobenius_norm();
    let frobenius_rel = (norm > 0.0).then(|| frobenius_abs / norm);
    Ok(ErrorReport { frobenius_abs, frobenius_rel, max_abs })
}

/// Textbook convolution. `input` is `(channels, h·w)`, `kernels` is
/// `(out_channels, channels·k·k)`; the result is `(out_channels, oh·ow)`.
pub fn direct_conv2d(input: &DenseMatrix, shape: TensorShape, kernels: &DenseMatrix, geom: ConvGeometry) -> Result<DenseMatrix> {
    shape.check(input)?;
    let (oh, ow) = geom.output_size(shape)?;
    let k = geom.kernel;
    if kernels.cols() != shape.channels * k * k {
        return Err(AmuError::config("kernel bank does not match the input channels"));
    }
    let mut out = DenseMatrix::zeros(kernels.rows(), oh * ow);
    for f in 0..kernels.rows() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for c in 0..shape.channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * geom.stride + ky) as isize - geom.padding as isize;
                            let x = (ox * geom.stride + kx) as isize - geom.padding as isize;
                            if y < 0 || x < 0 || y as usize >= shape.height || x as usize >= shape.width {
                                continue;
                            }
                            s += input[(c, y as usize * shape.width + x as usize)] * kernels[(f, (c * k + ky) * k + kx)];
                        }
                    }
                }
                out[(f, oy * ow + ox)] = s;
            }
        }
    }
    Ok(out)
}

/// A layer with a table, bias and threshold vector for every output neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct UnprunedLayer {
    pub i_levels: usize,
    pub in_dim: usize,
    pub q_in: u8,
    pub codebooks: Vec<Codebook>,
    /// `U` tables; table `u` belongs to neuron `u`.
    pub luts: QuantizedLutSet,
    pub bias: Vec<i32>,
    /// `None` for the read-out layer.
    pub thresholds: Option<ThresholdSet>,
    pub partition: PartitionConfig,
}

impl UnprunedLayer {
    pub fn n_codebooks(&self) -> usize {
        self.codebooks.len()
    }

    pub fn out_dim(&self) -> usize {
        self.luts.n_tables()
    }

    /// Integer accumulators of all `U` neurons for a full-width code vector.
    pub fn accumulate(&self, codes: &[u32]) -> Vec<i32> {
        let values: Vec<f64> = codes.iter().map(|&c| f64::from(c)).collect();
        let ids: Vec<usize> = self
            .codebooks
            .iter()
            .map(|cb| {
                let w = cb.sub_dim();
                recursive_encode(&cb.tree, &values[cb.slice * w..(cb.slice + 1) * w])
            })
            .collect();
        (0..self.out_dim())
            .map(|u| {
                let mut acc = self.bias[u];
                for (c, &id) in ids.iter().enumerate() {
                    acc += i32::from(self.luts.entry(u, id, c));
                }
                acc
            })
            .collect()
    }

    /// Output codes of all `U` neurons.
    pub fn forward_codes(&self, codes: &[u32]) -> Result<Vec<u32>> {
        let t = self.thresholds.as_ref().ok_or_else(|| AmuError::config("read-out layer has no thresholds"))?;
        Ok(self
            .accumulate(codes)
            .iter()
            .enumerate()
            .map(|(u, &a)| t.per_position[u].iter().filter(|&&x| x <= f64::from(a)).count() as u32)
            .collect())
    }

    /// Keeps only the neurons `next` reads (or every class for the read-out).
    pub fn prune(&self, next: Option<&UnprunedLayer>) -> Result<AmuLayer> {
        let (kept, o, m) = match next {
            Some(next) => (compute_pruned_positions(&next.codebooks)?, next.i_levels, next.n_codebooks()),
            None => ((0..self.out_dim()).collect(), self.out_dim(), 1),
        };
        Ok(AmuLayer {
            shape: LayerShape::new(self.i_levels, self.n_codebooks(), o, m),
            in_dim: self.in_dim,
            out_dim: self.out_dim(),
            q_in: self.q_in,
            codebooks: self.codebooks.clone(),
            luts: self.luts.select(&kept),
            bias: kept.iter().map(|&u| self.bias[u]).collect(),
            thresholds: self.thresholds.as_ref().map(|t| t.select(&kept)),
            partition: self.partition,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum UnprunedFront {
    /// Thresholds cover every output of the last exact layer.
    Exact { layers: Vec<DenseLayer>, thresholds: ThresholdSet },
    Pixels { input_dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnprunedNetwork {
    pub front: UnprunedFront,
    pub layers: Vec<UnprunedLayer>,
}

/// Full-width codes entering each layer plus the final scores.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveTrace {
    pub layer_inputs: Vec<Vec<u32>>,
    pub scores: Vec<i32>,
}

impl UnprunedNetwork {
    /// Full-width codes entering the first AMU layer.
    pub fn front_codes(&self, sample: &[f64]) -> Vec<u32> {
        let width = self.layers[0].in_dim;
        match &self.front {
            UnprunedFront::Pixels { .. } => (0..width)
                .map(|p| sample.get(p).map_or(0, |&x| (x * 255.0).round().clamp(0.0, 255.0) as u32))
                .collect(),
            UnprunedFront::Exact { layers, thresholds } => {
                let mut h = sample.to_vec();
                for (i, l) in layers.iter().enumerate() {
                    h = l.pre_activation(&h);
                    if i + 1 < layers.len() && l.activation == Activation::Relu {
                        h.iter_mut().for_each(|x| *x = x.max(0.0));
                    }
                }
                h.iter()
                    .enumerate()
                    .map(|(p, &v)| thresholds.per_position[p].iter().filter(|&&t| t <= v).count() as u32)
                    .collect()
            }
        }
    }

    pub fn naive_forward(&self, sample: &[f64]) -> Result<NaiveTrace> {
        let mut codes = self.front_codes(sample);
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let (hidden, readout) = self.layers.split_at(self.layers.len() - 1);
        for layer in hidden {
            layer_inputs.push(codes.clone());
            codes = layer.forward_codes(&codes)?;
        }
        layer_inputs.push(codes.clone());
        Ok(NaiveTrace { layer_inputs, scores: readout[0].accumulate(&codes) })
    }

    /// The pruned network the runtime executes.
    pub fn prune(&self) -> Result<AmuNetwork> {
        let layers = (0..self.layers.len())
            .map(|i| self.layers[i].prune(self.layers.get(i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let front = match &self.front {
            UnprunedFront::Pixels { input_dim } => FrontEnd::Pixels { input_dim: *input_dim },
            UnprunedFront::Exact { layers: dense, thresholds } => {
                let kept = compute_pruned_positions(&self.layers[0].codebooks)?;
                FrontEnd::Exact { layers: dense.clone(), thresholds: thresholds.select(&kept) }
            }
        };
        AmuNetwork::new(front, layers)
    }
}

/// Shape of a randomly generated network.
#[derive(Clone, Debug)]
pub struct RandomNetworkSpec {
    /// `(I, N)` per AMU layer, read-out last.
    pub layers: Vec<(usize, usize)>,
    /// Subspace width of every hidden layer's input.
    pub sub_dim: usize,
    pub input_dim: usize,
    pub exact_front: bool,
    pub q_bits: u8,
    pub n_classes: usize,
}

fn random_codebook(rng: &mut ChaCha8Rng, slice: usize, levels: usize, sub_dim: usize, max_code: u32) -> Codebook {
    let split_indexes = (0..levels).map(|_| rng.random_range(0..sub_dim)).collect();
    let split_values = (0..(1 << levels) - 1)
        .map(|_| {
            let k = rng.random_range(-1..=max_code as i64) as f64;
            // half the values sit exactly on a code so ties are exercised
            if rng.random_bool(0.5) {
                k
            } else {
                k + rng.random::<f64>()
            }
        })
        .collect();
    let data = (0..(1usize << levels) * sub_dim).map(|_| rng.sample(StandardNormal)).collect();
    Codebook {
        slice,
        tree: SplitTree::new(split_indexes, split_values).expect("valid tree"),
        prototypes: DenseMatrix::from_vec(1 << levels, sub_dim, data).expect("finite"),
    }
}

fn random_thresholds(rng: &mut ChaCha8Rng, n: usize, q: u8, center: f64, spread: f64) -> ThresholdSet {
    let normal = Normal::new(center, spread).expect("positive spread");
    let per = (0..n)
        .map(|_| {
            let mut t: Vec<f64> = (0..(1usize << q) - 1)
                .map(|_| {
                    let v = normal.sample(rng);
                    if rng.random_bool(0.5) { v.round() } else { v }
                })
                .collect();
            t.sort_by(f64::total_cmp);
            t
        })
        .collect();
    ThresholdSet::new(q, per).expect("sorted")
}

/// A network with random trees, tables, biases and thresholds, scaled so
/// that codes are spread over their whole range.
pub fn random_unpruned_network(spec: &RandomNetworkSpec, seed: u64) -> Result<UnprunedNetwork> {
    if spec.layers.is_empty() || spec.sub_dim == 0 || spec.n_classes == 0 || spec.input_dim == 0 {
        return Err(AmuError::config("random network needs layers, sub_dim, classes and inputs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = spec.q_bits;
    let n0 = spec.layers[0].1;
    let first_width = if spec.exact_front { n0 * spec.sub_dim } else { spec.input_dim.div_ceil(n0) * n0 };
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (li, &(levels, n)) in spec.layers.iter().enumerate() {
        let in_dim = if li == 0 { first_width } else { n * spec.sub_dim };
        let q_in = if li == 0 && !spec.exact_front { 8 } else { q };
        let out_dim = match spec.layers.get(li + 1) {
            Some(&(_, n_next)) => n_next * spec.sub_dim,
            None => spec.n_classes,
        };
        let sub_dim = in_dim / n;
        let codebooks = (0..n).map(|c| random_codebook(&mut rng, c, levels, sub_dim, (1 << q_in) - 1)).collect();
        let rows = 1usize << levels;
        let tables = (0..out_dim * rows * n).map(|_| rng.random::<u8>()).collect();
        let luts = QuantizedLutSet {
            n_rows: rows,
            n_cols: n,
            tables,
            scale: rng.random_range(0.001..0.1),
            offset: rng.random_range(-1.0..0.0),
            kept_positions: (0..out_dim).collect(),
        };
        let bias: Vec<i32> = (0..out_dim).map(|_| rng.random_range(-200..=200)).collect();
        let is_last = li + 1 == spec.layers.len();
        let thresholds = (!is_last).then(|| {
            let spread = 74.0 * (n as f64).sqrt();
            random_thresholds(&mut rng, out_dim, q, 127.5 * n as f64, spread)
        });
        let partition = if n >= 2 { PartitionConfig::Group { s: 1, e: 1 } } else { PartitionConfig::Complete };
        layers.push(UnprunedLayer { i_levels: levels, in_dim, q_in, codebooks, luts, bias, thresholds, partition });
    }
    let front = if spec.exact_front {
        let normal = Normal::new(0.0, 1.0 / (spec.input_dim as f64).sqrt()).expect("positive");
        let w: Vec<f64> = (0..spec.input_dim * first_width).map(|_| normal.sample(&mut rng)).collect();
        let dense = DenseLayer {
            weights: DenseMatrix::from_vec(spec.input_dim, first_width, w)?,
            bias: (0..first_width).map(|_| rng.random_range(-0.1..0.1)).collect(),
            activation: Activation::Relu,
            thresholds: None,
        };
        UnprunedFront::Exact { layers: vec![dense], thresholds: random_thresholds(&mut rng, first_width, q, 0.0, 0.5) }
    } else {
        UnprunedFront::Pixels { input_dim: spec.input_dim }
    };
    Ok(UnprunedNetwork { front, layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_small_cases() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(exact_gemm(&DenseMatrix::identity(2), &w).unwrap(), w);
        let a = DenseMatrix::from_vec(1, 1, vec![2.0]).unwrap();
        let b = DenseMatrix::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(exact_gemm(&a, &b).unwrap()[(0, 0)], 6.0);
        assert!(exact_gemm(&w, &a).is_err());
    }

    #[test]
    fn error_report_edges() {
        let x = DenseMatrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let r = approximation_error(&x, &x).unwrap();
        assert_eq!((r.frobenius_abs, r.frobenius_rel, r.max_abs), (0.0, Some(0.0), 0.0));
        let r = approximation_error(&x, &DenseMatrix::zeros(1, 2)).unwrap();
        assert_eq!(r.frobenius_rel, None);
        assert_eq!(r.max_abs, 2.0);
    }

    #[test]
    fn pointer_tree_leaf_order() {
        let tree = SplitTree::new(vec![0, 1], vec![0.0, 10.0, 20.0]).unwrap();
        assert_eq!(recursive_encode(&tree, &[0.0, 10.0]), 0);
        assert_eq!(recursive_encode(&tree, &[0.0, 11.0]), 1);
        assert_eq!(recursive_encode(&tree, &[1.0, 20.0]), 2);
        assert_eq!(recursive_encode(&tree, &[1.0, 21.0]), 3);
    }

    #[test]
    fn unit_conv_kernel_is_identity() {
        let x = DenseMatrix::from_vec(1, 9, (0..9).map(f64::from).collect()).unwrap();
        let k = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let g = ConvGeometry { kernel: 1, stride: 1, padding: 0 };
        assert_eq!(direct_conv2d(&x, TensorShape::new(1, 3, 3), &k, g).unwrap(), x);
    }

    #[test]
    fn delta_kernel_shifts() {
        // 3x3 kernel with a one at the top-left reads pixel (y-1, x-1)
        let x = DenseMatrix::from_vec(1, 9, (1..=9).map(f64::from).collect()).unwrap();
        let mut k = DenseMatrix::zeros(1, 9);
        k[(0, 0)] = 1.0;
        let g = ConvGeometry { kernel: 3, stride: 1, padding: 1 };
        let y = direct_conv2d(&x, TensorShape::new(1, 3, 3), &k, g).unwrap();
        assert_eq!(y.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn random_network_prunes_cleanly() {
        let spec = RandomNetworkSpec {
            layers: vec![(3, 4), (2, 2), (4, 4)],
            sub_dim: 5,
            input_dim: 30,
            exact_front: false,
            q_bits: 2,
            n_classes: 3,
        };
        let net = random_unpruned_network(&spec, 9).unwrap();
        let pruned = net.prune().unwrap();
        assert_eq!(pruned.layers[0].luts.n_tables(), 2 * 2);
        assert_eq!(pruned.layers[2].luts.n_tables(), 3);
    }
}
