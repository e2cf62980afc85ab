//! Convolution lowered to matrix multiplication.
//!
//! A tensor of `channels × height × width` is stored as a
//! `DenseMatrix` of shape `(channels, height·width)`. A bank of square
//! kernels is a `DenseMatrix` of shape `(out_channels, channels·k·k)` whose
//! columns run channel-major, then kernel row, then kernel column.

use crate::error::{AmuError, Result};
use crate::matrix::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        TensorShape { channels, height, width }
    }

    pub fn check(&self, t: &DenseMatrix) -> Result<()> {
        if t.rows() != self.channels || t.cols() != self.height * self.width {
            return Err(AmuError::config(format!(
                "tensor is {}x{}, shape {}x{}x{} needs {}x{}",
                t.rows(),
                t.cols(),
                self.channels,
                self.height,
                self.width,
                self.channels,
                self.height * self.width
            )));
        }
        Ok(())
    }
}

/// Sliding-window geometry shared by the lowering and the direct oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// `(out_height, out_width)` for `shape`.
    pub fn output_size(&self, shape: TensorShape) -> Result<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(AmuError::config("kernel and stride must be positive"));
        }
        let ph = shape.height + 2 * self.padding;
        let pw = shape.width + 2 * self.padding;
        if self.kernel > ph || self.kernel > pw {
            return Err(AmuError::config(format!("{0}x{0} kernel exceeds padded input {ph}x{pw}", self.kernel)));
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }
}

/// One row per output position (row-major over the output grid), each the
/// flattened receptive field.
pub fn im2col(input: &DenseMatrix, shape: TensorShape, geom: ConvGeometry) -> Result<DenseMatrix> {
    shape.check(input)?;
    let (oh, ow) = geom.output_size(shape)?;
    let k = geom.kernel;
    let mut out = DenseMatrix::zeros(oh * ow, shape.channels * k * k);
    for oy in 0..oh {
        for ox in 0..ow {
            let row = out.row_mut(oy * ow + ox);
            for c in 0..shape.channels {
                let plane = input.row(c);
                for ky in 0..k {
                    let y = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    for kx in 0..k {
                        let x = (ox * geom.stride + kx) as isize - geom.padding as isize;
                        if y >= 0 && x >= 0 && (y as usize) < shape.height && (x as usize) < shape.width {
                            row[(c * k + ky) * k + kx] = plane[y as usize * shape.width + x as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Convolution as `im2col(input) · kernelsᵀ`, returned as an
/// `(out_channels, out_h·out_w)` tensor.
pub fn conv2d_gemm(input: &DenseMatrix, shape: TensorShape, kernels: &DenseMatrix, geom: ConvGeometry) -> Result<DenseMatrix> {
    if kernels.cols() != shape.channels * geom.kernel * geom.kernel {
        return Err(AmuError::config(format!(
            "kernel bank has {} columns, expected {}",
            kernels.cols(),
            shape.channels * geom.kernel * geom.kernel
        )));
    }
    let patches = im2col(input, shape, geom)?;
    Ok(patches.matmul(&kernels.transpose())?.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_is_reshape() {
        let x = DenseMatrix::from_vec(2, 4, (0..8).map(f64::from).collect()).unwrap();
        let cols = im2col(&x, TensorShape::new(2, 2, 2), ConvGeometry { kernel: 1, stride: 1, padding: 0 }).unwrap();
        assert_eq!(cols, x.transpose());
    }

    #[test]
    fn three_by_three_on_four_by_four() {
        let x = DenseMatrix::from_vec(1, 16, (0..16).map(f64::from).collect()).unwrap();
        let cols = im2col(&x, TensorShape::new(1, 4, 4), ConvGeometry { kernel: 3, stride: 1, padding: 0 }).unwrap();
        assert_eq!(cols.shape(), (4, 9));
        assert_eq!(cols.row(3), &[5.0, 6.0, 7.0, 9.0, 10.0, 11.0, 13.0, 14.0, 15.0]);
    }

    #[test]
    fn padding_fills_zeros() {
        let x = DenseMatrix::from_vec(1, 1, vec![3.0]).unwrap();
        let cols = im2col(&x, TensorShape::new(1, 1, 1), ConvGeometry { kernel: 3, stride: 1, padding: 1 }).unwrap();
        assert_eq!(cols.row(0), &[0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn oversized_kernel() {
        let x = DenseMatrix::zeros(1, 4);
        let r = im2col(&x, TensorShape::new(1, 2, 2), ConvGeometry { kernel: 3, stride: 1, padding: 0 });
        assert!(matches!(r, Err(AmuError::Config(_))));
    }
}
