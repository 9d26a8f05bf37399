//! Small dense helpers shared by the numeric modules.

use nalgebra::linalg::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Matrix, Vector};

/// Column means of `m` as a vector (zero vector for an empty matrix).
pub fn column_means(m: &Matrix) -> Vector {
    let n = m.nrows();
    if n == 0 {
        return Vector::zeros(m.ncols());
    }
    let mut out = Vector::zeros(m.ncols());
    for j in 0..m.ncols() {
        out[j] = m.column(j).sum() / n as f64;
    }
    out
}

/// Subtracts the column means from every row.
pub fn center_columns(m: &Matrix) -> Matrix {
    let mu = column_means(m);
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let c = mu[j];
        out.column_mut(j).add_scalar_mut(-c);
    }
    out
}

/// Standard-normal matrix.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random `rows × cols` matrix with orthonormal rows (`rows <= cols`),
/// drawn from the QR factorization of a Gaussian matrix.
pub fn random_orthonormal_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    assert!(rows <= cols, "orthonormal rows need rows <= cols");
    let g = gaussian_matrix(rng, cols, rows);
    let qr = g.qr();
    let mut q = qr.q();
    // Fix the sign ambiguity so the draw is a Haar sample.
    let r = qr.r();
    for j in 0..rows {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q.transpose()
}

/// Random orthogonal `n × n` matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    random_orthonormal_rows(rng, n, n)
}

/// Frobenius norm.
pub fn frob(m: &Matrix) -> f64 {
    m.norm()
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// non-increasing order (eigenvectors as columns, same order).
pub fn sorted_symmetric_eigen(m: &Matrix) -> (Vector, Matrix) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = Matrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Rows of `m` selected by index, in the given order.
pub fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Returns true when every entry is finite.
pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}
