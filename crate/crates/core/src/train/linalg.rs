use crate::matrix::DenseMatrix;

#[derive(Debug)]
pub(crate) struct NotPositiveDefinite;

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
pub(crate) fn solve_spd(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, NotPositiveDefinite> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.rows(), n);
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let tol = scale * 1e-10;

    // lower-triangular factor, row-major
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            return Err(NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            let (ri, rj) = (l.row(i), l.row(j));
            for k in 0..j {
                s -= ri[k] * rj[k];
            }
            l[(i, j)] = s / d;
        }
    }

    let m = b.cols();
    let mut x = b.clone();
    // forward: L y = b
    for i in 0..n {
        for k in 0..i {
            let f = l[(i, k)];
            if f != 0.0 {
                for c in 0..m {
                    let v = x[(k, c)];
                    x[(i, c)] -= f * v;
                }
            }
        }
        let d = l[(i, i)];
        x.row_mut(i).iter_mut().for_each(|v| *v /= d);
    }
    // backward: Lᵀ x = y
    for i in (0..n).rev() {
        for k in i + 1..n {
            let f = l[(k, i)];
            if f != 0.0 {
                for c in 0..m {
                    let v = x[(k, c)];
                    x[(i, c)] -= f * v;
                }
            }
        }
        let d = l[(i, i)];
        x.row_mut(i).iter_mut().for_each(|v| *v /= d);
    }
    Ok(x)
}
