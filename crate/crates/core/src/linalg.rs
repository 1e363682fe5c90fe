//! Dense symmetric eigensolver and Gram products, backed by faer.

use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Result, ShdlError};

fn to_faer(a: ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// `A Aᵀ` for a `rows x cols` matrix.
pub fn gram(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let m = to_faer(a);
    let g = &m * m.transpose();
    let mut out = from_faer(g.as_ref());
    symmetrize(&mut out);
    out
}

fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

/// Eigen-decomposition of a symmetric matrix.
///
/// Eigenvalues are returned in non-increasing order; column `i` of the
/// returned matrix is the unit eigenvector for eigenvalue `i`.
pub fn symmetric_eigen(a: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(ShdlError::Dimension(format!(
            "eigen-decomposition needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(ShdlError::Validation("non-finite matrix entry".into()));
    }
    let evd = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| ShdlError::Degenerate(format!("eigensolver failed: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| s[i]));
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| u[(r, order[c])]);
    Ok((values, vectors))
}
