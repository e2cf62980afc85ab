//! Partial dot-product tables and their 8-bit quantization.

use super::prototypes::Codebook;
use crate::error::{AmuError, Result};
use crate::matrix::DenseMatrix;

/// Real-valued tables, one `(2^I, N)` matrix per output neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct RealLuts {
    pub tables: Vec<DenseMatrix>,
    pub positions: Vec<usize>,
}

impl RealLuts {
    pub fn n_rows(&self) -> usize {
        self.tables.first().map_or(0, DenseMatrix::rows)
    }

    pub fn n_cols(&self) -> usize {
        self.tables.first().map_or(0, DenseMatrix::cols)
    }

    fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.tables.iter().flat_map(|t| t.as_slice().iter().copied())
    }
}

/// Builds the table of every neuron in `kept_positions`.
///
/// `table[k][c] = ⟨prototype k of codebook c, column u of W on c's slice⟩`;
/// `weights` has shape `(in_dim, out_dim)`.
pub fn build_luts(codebooks: &[Codebook], weights: &DenseMatrix, kept_positions: &[usize]) -> Result<RealLuts> {
    let Some(first) = codebooks.first() else {
        return Err(AmuError::config("no codebooks"));
    };
    let sub_dim = first.sub_dim();
    let n_leaves = first.tree.n_leaves();
    if weights.rows() != codebooks.len() * sub_dim {
        return Err(AmuError::config(format!(
            "weights have {} rows, codebooks cover {}",
            weights.rows(),
            codebooks.len() * sub_dim
        )));
    }
    if let Some(&bad) = kept_positions.iter().find(|&&u| u >= weights.cols()) {
        return Err(AmuError::config(format!("kept position {bad} outside [0, {})", weights.cols())));
    }
    let n = codebooks.len();
    let tables = kept_positions
        .iter()
        .map(|&u| {
            let mut t = DenseMatrix::zeros(n_leaves, n);
            for (c, cb) in codebooks.iter().enumerate() {
                let start = cb.slice * sub_dim;
                for k in 0..n_leaves {
                    let proto = cb.prototypes.row(k);
                    t[(k, c)] = proto.iter().enumerate().map(|(d, p)| p * weights[(start + d, u)]).sum();
                }
            }
            t
        })
        .collect();
    Ok(RealLuts { tables, positions: kept_positions.to_vec() })
}

/// One shared affine 8-bit code for every table of a layer.
///
/// `tables` holds `n_tables` tables of `n_rows × n_cols` unsigned codes,
/// row-major, back to back. A code `q` stands for `q·scale + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLutSet {
    pub n_rows: usize,
    pub n_cols: usize,
    pub tables: Vec<u8>,
    pub scale: f64,
    pub offset: f64,
    /// Output neuron of each table.
    pub kept_positions: Vec<usize>,
}

impl QuantizedLutSet {
    pub fn n_tables(&self) -> usize {
        self.kept_positions.len()
    }

    #[inline]
    pub fn table(&self, t: usize) -> &[u8] {
        let size = self.n_rows * self.n_cols;
        &self.tables[t * size..(t + 1) * size]
    }

    #[inline]
    pub fn entry(&self, t: usize, row: usize, col: usize) -> u8 {
        self.tables[(t * self.n_rows + row) * self.n_cols + col]
    }

    pub fn dequantize(&self, code: u8) -> f64 {
        f64::from(code) * self.scale + self.offset
    }

    /// Keeps only the listed tables, in the given order.
    pub fn select(&self, tables: &[usize]) -> QuantizedLutSet {
        let mut out = Vec::with_capacity(tables.len() * self.n_rows * self.n_cols);
        for &t in tables {
            out.extend_from_slice(self.table(t));
        }
        QuantizedLutSet {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            tables: out,
            scale: self.scale,
            offset: self.offset,
            kept_positions: tables.iter().map(|&t| self.kept_positions[t]).collect(),
        }
    }
}

/// Affine parameters of [`quantize_luts`]: `offset = min`, `scale = (max − min)/255`
/// (1 when all entries are equal).
pub fn lut_affine(real: &RealLuts) -> (f64, f64) {
    let (lo, hi) = real.entries().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || hi <= lo {
        return (1.0, if lo.is_finite() { lo } else { 0.0 });
    }
    ((hi - lo) / 255.0, lo)
}

/// Quantizes all tables with one per-layer affine map; each entry is off by
/// at most `scale / 2` after dequantization.
pub fn quantize_luts(real: &RealLuts) -> QuantizedLutSet {
    let (scale, offset) = lut_affine(real);
    quantize_luts_with(real, scale, offset)
}

/// Quantizes with a given affine map, clamping codes to `[0, 255]`.
pub fn quantize_luts_with(real: &RealLuts, scale: f64, offset: f64) -> QuantizedLutSet {
    let tables = real.entries().map(|v| ((v - offset) / scale).round().clamp(0.0, 255.0) as u8).collect();
    QuantizedLutSet {
        n_rows: real.n_rows(),
        n_cols: real.n_cols(),
        tables,
        scale,
        offset,
        kept_positions: real.positions.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::synth::random_normal_matrix;
    use crate::train::prototypes::{learn_codebooks, SubspaceLayout};
    use crate::train::SplitTree;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_codebook() -> Codebook {
        Codebook {
            slice: 0,
            tree: SplitTree::new(vec![0], vec![0.5]).unwrap(),
            prototypes: DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        }
    }

    #[test]
    fn unit_dot_product() {
        let w = DenseMatrix::identity(2);
        let luts = build_luts(&[unit_codebook()], &w, &[0, 1]).unwrap();
        assert_eq!(luts.tables[0][(0, 0)], 1.0);
        assert_eq!(luts.tables[0][(1, 0)], 0.0);
        assert_eq!(luts.tables[1][(1, 0)], 1.0);
    }

    #[test]
    fn zero_weights_zero_tables() {
        let luts = build_luts(&[unit_codebook()], &DenseMatrix::zeros(2, 3), &[0, 1, 2]).unwrap();
        assert!(luts.tables.iter().all(|t| t.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn out_of_range_position() {
        assert!(matches!(build_luts(&[unit_codebook()], &DenseMatrix::zeros(2, 3), &[3]), Err(AmuError::Config(_))));
    }

    #[test]
    fn entries_are_direct_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_normal_matrix(200, 32, &mut rng);
        let w = random_normal_matrix(32, 12, &mut rng);
        let cbs = learn_codebooks(&x, SubspaceLayout::new(32, 4).unwrap(), 3).unwrap();
        let kept = [0, 5, 11];
        let luts = build_luts(&cbs, &w, &kept).unwrap();
        for (t, &u) in kept.iter().enumerate() {
            for (c, cb) in cbs.iter().enumerate() {
                for k in 0..8 {
                    let mut direct = 0.0;
                    for d in 0..8 {
                        direct += cb.prototypes[(k, d)] * w[(c * 8 + d, u)];
                    }
                    assert!((luts.tables[t][(k, c)] - direct).abs() < 1e-9);
                }
            }
        }
    }

    fn real(values: &[f64]) -> RealLuts {
        RealLuts { tables: vec![DenseMatrix::from_vec(1, values.len(), values.to_vec()).unwrap()], positions: vec![0] }
    }

    #[test]
    fn constant_table() {
        let q = quantize_luts(&real(&[2.5, 2.5, 2.5]));
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.tables, vec![0, 0, 0]);
        assert_eq!(q.dequantize(0), 2.5);
    }

    #[test]
    fn lattice_aligned() {
        let q = quantize_luts(&real(&[0.0, 255.0]));
        assert_eq!((q.scale, q.offset), (1.0, 0.0));
        assert_eq!(q.tables, vec![0, 255]);
    }

    #[test]
    fn error_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_normal_matrix(16, 8, &mut rng);
        let r = RealLuts { tables: vec![m.clone()], positions: vec![0] };
        let q = quantize_luts(&r);
        for (code, v) in q.tables.iter().zip(m.as_slice()) {
            assert!((q.dequantize(*code) - v).abs() <= q.scale / 2.0 + 1e-9);
        }
    }
}
