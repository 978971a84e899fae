//! Small dense linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Column-major vectorization: `x[j*n + i] = X[i, j]`.
pub fn vectorize(x: &DMatrix<f64>) -> Vec<f64> {
    x.as_slice().to_vec()
}

/// Inverse of [`vectorize`].
pub fn unstack(x: &[f64], n: usize, r: usize) -> Result<DMatrix<f64>> {
    if x.len() != n * r {
        return Err(Error::Shape(format!("unstack: length {} != {}x{}", x.len(), n, r)));
    }
    Ok(DMatrix::from_column_slice(n, r, x))
}

pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Flip `v` so its first entry with magnitude above `1e-12` is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().copied().find(|a| a.abs() > 1e-12) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order and
/// eigenvectors (columns) under the [`fix_sign`] convention.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        fix_sign(&mut v);
        vecs.set_column(c, &v);
    }
    (values, vecs)
}

/// Symmetric `n x n` matrix with standard normal upper triangle.
pub fn random_symmetric(rng: &mut crate::rng::Rng, n: usize) -> DMatrix<f64> {
    let g = crate::rng::normal_matrix(rng, n, n);
    (&g + g.transpose()) * 0.5
}
