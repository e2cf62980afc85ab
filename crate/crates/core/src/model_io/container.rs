//! Binary container for fitted networks and reference MLPs.
//!
//! Layout: 4-byte magic, `u16` version, then a sequence of fields. Every
//! field starts with a one-byte tag that the reader checks, so a file that
//! drifts out of step fails loudly instead of decoding garbage. All numbers
//! are little-endian; reals are stored as their IEEE-754 bit patterns.
//!
//! A network file may omit prototypes (`compact`); they are not needed for
//! inference and are restored as zeros.

use std::fs;
use std::path::Path;

use crate::cost::{LayerShape, PartitionConfig};
use crate::error::{AmuError, Result};
use crate::matrix::DenseMatrix;
use crate::model_io::mlp::{Activation, DenseLayer, MlpModel};
use crate::runtime::{AmuLayer, AmuNetwork, FrontEnd};
use crate::train::{Codebook, QuantizedLutSet, SplitTree, ThresholdSet};

pub const NETWORK_MAGIC: &[u8; 4] = b"AMUN";
pub const MLP_MAGIC: &[u8; 4] = b"AMLP";
pub const CONTAINER_VERSION: u16 = 1;

mod tag {
    pub const FRONT_EXACT: u8 = 0x01;
    pub const FRONT_PIXELS: u8 = 0x02;
    pub const DENSE_LAYER: u8 = 0x03;
    pub const THRESHOLDS: u8 = 0x04;
    pub const NO_THRESHOLDS: u8 = 0x05;
    pub const AMU_LAYER: u8 = 0x10;
    pub const SHAPE: u8 = 0x11;
    pub const CODEBOOK: u8 = 0x12;
    pub const PROTOTYPES: u8 = 0x13;
    pub const NO_PROTOTYPES: u8 = 0x14;
    pub const LUTS: u8 = 0x15;
    pub const BIAS: u8 = 0x16;
    pub const PARTITION: u8 = 0x17;
    pub const MATRIX: u8 = 0x20;
    pub const COUNT: u8 = 0x21;
    pub const END: u8 = 0x7f;
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn count(&mut self, n: usize) {
        self.u8(tag::COUNT);
        self.len(n);
    }
    fn matrix(&mut self, m: &DenseMatrix) {
        self.u8(tag::MATRIX);
        self.len(m.rows());
        self.len(m.cols());
        m.as_slice().iter().for_each(|&v| self.f64(v));
    }
    fn reals(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn thresholds(&mut self, t: Option<&ThresholdSet>) {
        match t {
            None => self.u8(tag::NO_THRESHOLDS),
            Some(t) => {
                self.u8(tag::THRESHOLDS);
                self.u8(t.q_bits);
                self.len(t.len());
                for p in &t.per_position {
                    p.iter().for_each(|&x| self.f64(x));
                }
            }
        }
    }
    fn dense_layer(&mut self, l: &DenseLayer) {
        self.u8(tag::DENSE_LAYER);
        self.u8(match l.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
        self.matrix(&l.weights);
        self.reals(&l.bias);
        self.thresholds(l.thresholds.as_ref());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(AmuError::format(format!("truncated container at byte {}", self.at)));
        };
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    /// A length, sanity-checked against the bytes left so a corrupt count
    /// cannot trigger a huge allocation.
    fn len(&mut self, min_item_bytes: usize) -> Result<usize> {
        let at = self.at;
        let v = self.u64()?;
        let left = (self.bytes.len() - self.at) as u64;
        if v.saturating_mul(min_item_bytes as u64) > left {
            return Err(AmuError::format(format!("length {v} at byte {at} exceeds the remaining {left} bytes")));
        }
        Ok(v as usize)
    }
    fn expect(&mut self, want: u8) -> Result<()> {
        let at = self.at;
        let got = self.u8()?;
        if got != want {
            return Err(AmuError::format(format!("expected field tag {want:#04x} at byte {at}, found {got:#04x}")));
        }
        Ok(())
    }
    fn count(&mut self) -> Result<usize> {
        self.expect(tag::COUNT)?;
        self.len(1)
    }
    fn matrix(&mut self) -> Result<DenseMatrix> {
        self.expect(tag::MATRIX)?;
        let rows = self.len(0)?;
        let cols = self.len(0)?;
        let n = rows.checked_mul(cols).ok_or_else(|| AmuError::format("matrix size overflows"))?;
        if n.saturating_mul(8) > self.bytes.len() - self.at {
            return Err(AmuError::format("truncated matrix"));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        DenseMatrix::from_vec(rows, cols, data).map_err(|e| AmuError::format(e.to_string()))
    }
    fn reals(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn thresholds(&mut self) -> Result<Option<ThresholdSet>> {
        match self.u8()? {
            tag::NO_THRESHOLDS => Ok(None),
            tag::THRESHOLDS => {
                let q = self.u8()?;
                if !(1..=16).contains(&q) {
                    return Err(AmuError::format(format!("threshold width {q} outside [1, 16]")));
                }
                let per = (1usize << q) - 1;
                let n = self.len(per * 8)?;
                let per_position = (0..n).map(|_| (0..per).map(|_| self.f64()).collect()).collect::<Result<Vec<Vec<f64>>>>()?;
                ThresholdSet::new(q, per_position).map(Some).map_err(|e| AmuError::format(e.to_string()))
            }
            other => Err(AmuError::format(format!("unknown threshold tag {other:#04x}"))),
        }
    }
    fn dense_layer(&mut self) -> Result<DenseLayer> {
        self.expect(tag::DENSE_LAYER)?;
        let activation = match self.u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            a => return Err(AmuError::format(format!("unknown activation {a}"))),
        };
        let weights = self.matrix()?;
        let bias = self.reals()?;
        let thresholds = self.thresholds()?;
        if bias.len() != weights.cols() {
            return Err(AmuError::format("dense layer bias does not match its weights"));
        }
        Ok(DenseLayer { weights, bias, activation, thresholds })
    }
}

fn header(w: &mut Writer, magic: &[u8; 4]) {
    w.buf.extend_from_slice(magic);
    w.u16(CONTAINER_VERSION);
}

fn check_header(r: &mut Reader, magic: &[u8; 4]) -> Result<()> {
    if r.take(4)? != magic {
        return Err(AmuError::format(format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let v = r.u16()?;
    if v != CONTAINER_VERSION {
        return Err(AmuError::Version { found: v, expected: CONTAINER_VERSION });
    }
    Ok(())
}

fn finish(r: &Reader) -> Result<()> {
    if r.at != r.bytes.len() {
        return Err(AmuError::format(format!("{} trailing bytes", r.bytes.len() - r.at)));
    }
    Ok(())
}

fn write_amu_layer(w: &mut Writer, l: &AmuLayer, with_prototypes: bool) {
    w.u8(tag::AMU_LAYER);
    w.u8(tag::SHAPE);
    let s = l.shape;
    for v in [s.i_levels, s.n_codebooks, s.o_packages, s.m_codebooks_out, l.in_dim, l.out_dim] {
        w.len(v);
    }
    w.u8(l.q_in);
    for cb in &l.codebooks {
        w.u8(tag::CODEBOOK);
        w.len(cb.slice);
        cb.tree.split_indexes.iter().for_each(|&d| w.u32(d as u32));
        cb.tree.split_values.iter().for_each(|&v| w.f64(v));
        if with_prototypes {
            w.u8(tag::PROTOTYPES);
            cb.prototypes.as_slice().iter().for_each(|&v| w.f64(v));
        } else {
            w.u8(tag::NO_PROTOTYPES);
        }
    }
    w.u8(tag::LUTS);
    w.f64(l.luts.scale);
    w.f64(l.luts.offset);
    w.buf.extend_from_slice(&l.luts.tables);
    l.luts.kept_positions.iter().for_each(|&p| w.u32(p as u32));
    w.u8(tag::BIAS);
    l.bias.iter().for_each(|&b| w.u32(b as u32));
    w.thresholds(l.thresholds.as_ref());
    w.u8(tag::PARTITION);
    match l.partition {
        PartitionConfig::Complete => w.u8(0),
        PartitionConfig::Group { s, e } => {
            w.u8(1);
            w.len(s);
            w.len(e);
        }
    }
}

fn read_amu_layer(r: &mut Reader) -> Result<AmuLayer> {
    r.expect(tag::AMU_LAYER)?;
    r.expect(tag::SHAPE)?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.len(0)?;
    }
    let [i, n, o, m, in_dim, out_dim] = dims;
    if !(1..=16).contains(&i) || n == 0 || in_dim % n != 0 {
        return Err(AmuError::format(format!("implausible layer shape I = {i}, N = {n}, width {in_dim}")));
    }
    let q_in = r.u8()?;
    let sub_dim = in_dim / n;
    let leaves = 1usize << i;
    let mut codebooks = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        r.expect(tag::CODEBOOK)?;
        let slice = r.len(0)?;
        let split_indexes = (0..i).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let split_values = (0..leaves - 1).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let tree = SplitTree::new(split_indexes, split_values).map_err(|e| AmuError::format(e.to_string()))?;
        let prototypes = match r.u8()? {
            tag::PROTOTYPES => {
                let data = (0..leaves * sub_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                DenseMatrix::from_vec(leaves, sub_dim, data).map_err(|e| AmuError::format(e.to_string()))?
            }
            tag::NO_PROTOTYPES => DenseMatrix::zeros(leaves, sub_dim),
            t => return Err(AmuError::format(format!("unknown prototype tag {t:#04x}"))),
        };
        codebooks.push(Codebook { slice, tree, prototypes });
    }
    r.expect(tag::LUTS)?;
    let scale = r.f64()?;
    let offset = r.f64()?;
    let slots = o.checked_mul(m).ok_or_else(|| AmuError::format("slot count overflows"))?;
    let table_bytes = slots
        .checked_mul(leaves)
        .and_then(|v| v.checked_mul(n))
        .ok_or_else(|| AmuError::format("table size overflows"))?;
    let tables = r.take(table_bytes)?.to_vec();
    let kept_positions = (0..slots).map(|_| r.u32().map(|p| p as usize)).collect::<Result<Vec<_>>>()?;
    r.expect(tag::BIAS)?;
    let bias = (0..slots).map(|_| r.u32().map(|b| b as i32)).collect::<Result<Vec<_>>>()?;
    let thresholds = r.thresholds()?;
    r.expect(tag::PARTITION)?;
    let partition = match r.u8()? {
        0 => PartitionConfig::Complete,
        1 => PartitionConfig::Group { s: r.len(0)?, e: r.len(0)? },
        k => return Err(AmuError::format(format!("unknown partition kind {k}"))),
    };
    Ok(AmuLayer {
        shape: LayerShape::new(i, n, o, m),
        in_dim,
        out_dim,
        q_in,
        codebooks,
        luts: QuantizedLutSet { n_rows: leaves, n_cols: n, tables, scale, offset, kept_positions },
        bias,
        thresholds,
        partition,
    })
}

/// Serializes a network; `with_prototypes = false` writes the compact form.
pub fn encode_amu_network(net: &AmuNetwork, with_prototypes: bool) -> Vec<u8> {
    let mut w = Writer::default();
    header(&mut w, NETWORK_MAGIC);
    match &net.front {
        FrontEnd::Exact { layers, thresholds } => {
            w.u8(tag::FRONT_EXACT);
            w.count(layers.len());
            layers.iter().for_each(|l| w.dense_layer(l));
            w.thresholds(Some(thresholds));
        }
        FrontEnd::Pixels { input_dim } => {
            w.u8(tag::FRONT_PIXELS);
            w.len(*input_dim);
        }
    }
    w.count(net.layers.len());
    net.layers.iter().for_each(|l| write_amu_layer(&mut w, l, with_prototypes));
    w.u8(tag::END);
    w.buf
}

/// Parses and validates a network.
pub fn decode_amu_network(bytes: &[u8]) -> Result<AmuNetwork> {
    let mut r = Reader { bytes, at: 0 };
    check_header(&mut r, NETWORK_MAGIC)?;
    let front = match r.u8()? {
        tag::FRONT_EXACT => {
            let n = r.count()?;
            let layers = (0..n).map(|_| r.dense_layer()).collect::<Result<Vec<_>>>()?;
            let thresholds = r.thresholds()?.ok_or_else(|| AmuError::format("exact front without thresholds"))?;
            FrontEnd::Exact { layers, thresholds }
        }
        tag::FRONT_PIXELS => FrontEnd::Pixels { input_dim: r.len(0)? },
        t => return Err(AmuError::format(format!("unknown front tag {t:#04x}"))),
    };
    let n = r.count()?;
    let layers = (0..n).map(|_| read_amu_layer(&mut r)).collect::<Result<Vec<_>>>()?;
    r.expect(tag::END)?;
    finish(&r)?;
    AmuNetwork::new(front, layers).map_err(|e| AmuError::format(format!("stored network is inconsistent: {e}")))
}

pub fn save_amu_network(net: &AmuNetwork, path: &Path) -> Result<()> {
    fs::write(path, encode_amu_network(net, true))?;
    Ok(())
}

/// Saves without prototypes.
pub fn save_amu_network_compact(net: &AmuNetwork, path: &Path) -> Result<()> {
    fs::write(path, encode_amu_network(net, false))?;
    Ok(())
}

pub fn load_amu_network(path: &Path) -> Result<AmuNetwork> {
    decode_amu_network(&fs::read(path)?)
}

pub fn encode_mlp(model: &MlpModel) -> Vec<u8> {
    let mut w = Writer::default();
    header(&mut w, MLP_MAGIC);
    w.f64(model.train_accuracy);
    w.count(model.layers.len());
    model.layers.iter().for_each(|l| w.dense_layer(l));
    w.u8(tag::END);
    w.buf
}

pub fn decode_mlp(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader { bytes, at: 0 };
    check_header(&mut r, MLP_MAGIC)?;
    let train_accuracy = r.f64()?;
    let n = r.count()?;
    let layers = (0..n).map(|_| r.dense_layer()).collect::<Result<Vec<_>>>()?;
    r.expect(tag::END)?;
    finish(&r)?;
    if layers.is_empty() || layers.windows(2).any(|p| p[0].out_dim() != p[1].in_dim()) {
        return Err(AmuError::format("stored MLP layers do not chain"));
    }
    Ok(MlpModel { layers, train_accuracy })
}

pub fn save_mlp(model: &MlpModel, path: &Path) -> Result<()> {
    fs::write(path, encode_mlp(model))?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<MlpModel> {
    decode_mlp(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_round_trip_is_bit_exact() {
        let mut model = MlpModel::random(&[5, 4, 3], 11).unwrap();
        model.train_accuracy = 0.123456789;
        model.layers[0].thresholds = Some(ThresholdSet::new(1, vec![vec![0.25]; 4]).unwrap());
        let bytes = encode_mlp(&model);
        assert_eq!(decode_mlp(&bytes).unwrap(), model);
        assert_eq!(encode_mlp(&decode_mlp(&bytes).unwrap()), bytes);
    }

    #[test]
    fn version_and_magic() {
        let model = MlpModel::random(&[2, 2], 1).unwrap();
        let mut bytes = encode_mlp(&model);
        bytes[4] ^= 0xff;
        assert!(matches!(decode_mlp(&bytes), Err(AmuError::Version { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_mlp(&bytes), Err(AmuError::Format(_))));
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = encode_mlp(&MlpModel::random(&[3, 2], 5).unwrap());
        for cut in 0..bytes.len() {
            assert!(matches!(decode_mlp(&bytes[..cut]), Err(AmuError::Format(_))), "cut at {cut}");
        }
    }
}
