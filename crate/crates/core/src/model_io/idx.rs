//! IDX file reader and writer (the MNIST distribution format).
//!
//! Header: two zero bytes, a type byte (`0x08` = unsigned byte), the number of
//! dimensions, then one big-endian `u32` per dimension.

use std::fs;
use std::path::Path;

use crate::error::{AmuError, Result};
use crate::matrix::DenseMatrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Samples (one per row) with an integer class per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub samples: DenseMatrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledDataset {
    pub fn new(samples: DenseMatrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != samples.rows() {
            return Err(AmuError::Consistency(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(AmuError::Consistency(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(LabeledDataset { samples, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// The first `n` samples (or all of them if fewer exist).
    pub fn head(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        LabeledDataset {
            samples: self.samples.select_rows(&idx),
            labels: self.labels[..n].to_vec(),
            n_classes: self.n_classes,
        }
    }
}

struct IdxHeader {
    magic: u32,
    dims: Vec<usize>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8], what: &str) -> Result<IdxHeader> {
    if bytes.len() < 4 {
        return Err(AmuError::format(format!("{what}: file too short for an IDX header")));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(AmuError::format(format!("{what}: bad IDX magic {magic:#010x}")));
    }
    let ndims = bytes[3] as usize;
    let body_offset = 4 + 4 * ndims;
    if ndims == 0 || bytes.len() < body_offset {
        return Err(AmuError::format(format!("{what}: truncated IDX dimension header")));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    if bytes.len() - body_offset != expected {
        return Err(AmuError::format(format!(
            "{what}: header announces {expected} bytes of data, file holds {}",
            bytes.len() - body_offset
        )));
    }
    Ok(IdxHeader { magic, dims, body_offset })
}

/// Parses an IDX image file into a `(count, rows·cols)` matrix scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<DenseMatrix> {
    let h = parse_header(bytes, "images")?;
    if h.magic != IMAGES_MAGIC {
        return Err(AmuError::format(format!("images: expected magic 0x00000803, found {:#010x}", h.magic)));
    }
    let n = h.dims[0];
    let width: usize = h.dims[1..].iter().product();
    let data = bytes[h.body_offset..].iter().map(|&b| f64::from(b) / 255.0).collect();
    DenseMatrix::from_vec(n, width, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let h = parse_header(bytes, "labels")?;
    if h.magic != LABELS_MAGIC {
        return Err(AmuError::format(format!("labels: expected magic 0x00000801, found {:#010x}", h.magic)));
    }
    Ok(bytes[h.body_offset..].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair. The class count is `max(label) + 1`, and
/// at least 10 when the images are 28×28 digits.
pub fn load_idx_dataset(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let samples = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if samples.rows() != labels.len() {
        return Err(AmuError::Consistency(format!(
            "{} images but {} labels",
            samples.rows(),
            labels.len()
        )));
    }
    let mut n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if samples.cols() == 784 {
        n_classes = n_classes.max(10);
    }
    LabeledDataset::new(samples, labels, n_classes)
}

/// Loads `train-*` or `t10k-*` files from a directory in the MNIST naming scheme.
pub fn load_mnist_split(dir: &Path, train: bool) -> Result<LabeledDataset> {
    let prefix = if train { "train" } else { "t10k" };
    load_idx_dataset(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Encodes images as an IDX byte buffer. Values are rescaled from `[0, 1]`
/// with rounding, so a matrix produced by [`parse_idx_images`] reproduces its
/// source bytes exactly.
pub fn encode_idx_images(samples: &DenseMatrix, height: usize, width: usize) -> Result<Vec<u8>> {
    if height * width != samples.cols() {
        return Err(AmuError::config(format!(
            "{height}x{width} images do not match {} columns",
            samples.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + samples.as_slice().len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [samples.rows(), height, width] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(samples.as_slice().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| AmuError::config(format!("label {l} does not fit a byte")))?;
        out.push(b);
    }
    Ok(out)
}

/// Writes a dataset of square images as an IDX pair.
pub fn write_idx_dataset(data: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let side = (data.dim() as f64).sqrt().round() as usize;
    let (h, w) = if side * side == data.dim() { (side, side) } else { (1, data.dim()) };
    fs::write(images_path, encode_idx_images(&data.samples, h, w)?)?;
    fs::write(labels_path, encode_idx_labels(&data.labels)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        for d in [n as u32, 28, 28] {
            img.extend_from_slice(&d.to_be_bytes());
        }
        for i in 0..n * 784 {
            img.push(((i * 37) % 256) as u8);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(n as u32).to_be_bytes());
        lab.extend((0..n).map(|i| (i % 10) as u8));
        (img, lab)
    }

    #[test]
    fn ten_image_fixture() {
        let dir = std::env::temp_dir().join(format!("amu-idx-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let (img, lab) = fixture(10);
        fs::write(dir.join("i"), &img).unwrap();
        fs::write(dir.join("l"), &lab).unwrap();
        let ds = load_idx_dataset(&dir.join("i"), &dir.join("l")).unwrap();
        assert_eq!(ds.samples.shape(), (10, 784));
        assert!(ds.samples.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(ds.n_classes, 10);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_file_is_format_error() {
        assert!(matches!(parse_idx_images(&[]), Err(AmuError::Format(_))));
        assert!(matches!(parse_idx_labels(&[]), Err(AmuError::Format(_))));
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let (img, lab) = fixture(2);
        assert!(matches!(parse_idx_images(&lab), Err(AmuError::Format(_))));
        assert!(matches!(parse_idx_images(&img[..img.len() - 1]), Err(AmuError::Format(_))));
    }

    #[test]
    fn count_mismatch_is_consistency_error() {
        let dir = std::env::temp_dir().join(format!("amu-idx-mm-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let (img, _) = fixture(3);
        let (_, lab) = fixture(4);
        fs::write(dir.join("i"), &img).unwrap();
        fs::write(dir.join("l"), &lab).unwrap();
        let err = load_idx_dataset(&dir.join("i"), &dir.join("l")).unwrap_err();
        assert!(matches!(err, AmuError::Consistency(_)));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn byte_round_trip() {
        let (img, lab) = fixture(5);
        let m = parse_idx_images(&img).unwrap();
        assert_eq!(encode_idx_images(&m, 28, 28).unwrap(), img);
        let l = parse_idx_labels(&lab).unwrap();
        assert_eq!(encode_idx_labels(&l).unwrap(), lab);
    }
}
