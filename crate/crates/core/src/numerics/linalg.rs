//! Dense decompositions, delegated to nalgebra.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Matrix;
use crate::error::{Error, Result};

pub(crate) fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if m.rows() != m.cols() {
        return Err(Error::Shape("eigendecomposition of a non-square matrix".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(to_na(m));
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Matrix::from_fn(m.rows(), m.cols(), |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Symmetric power `C^p` of a symmetric positive definite matrix.
///
/// Fails with the smallest eigenvalue when `C` is numerically singular.
pub fn sym_power(c: &Matrix, p: f64) -> Result<Matrix> {
    let (values, vectors) = sym_eigen(c)?;
    let largest = values.last().copied().unwrap_or(0.0);
    let smallest = values.first().copied().unwrap_or(0.0);
    if !(smallest > 1e-12 * largest.abs().max(1e-300)) {
        return Err(Error::Numerical(format!(
            "covariance is rank deficient (smallest eigenvalue {smallest:e})"
        )));
    }
    let n = c.rows();
    Ok(Matrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| vectors[(i, k)] * values[k].powf(p) * vectors[(j, k)]).sum()
    }))
}

pub fn inverse(m: &Matrix) -> Result<Matrix> {
    to_na(m)
        .try_inverse()
        .map(|inv| from_na(&inv))
        .ok_or_else(|| Error::Numerical("matrix is singular".into()))
}

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Ratio of largest to smallest singular value (`inf` if singular).
pub fn condition_number(m: &Matrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Random orthogonal matrix from the QR factorization of a Gaussian draw.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // fix column signs so the draw is Haar distributed
    let mut q = from_na(&q);
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Least-squares solution of `design * coef = target` via SVD.
///
/// Returns the coefficients and the numerical rank of the design.
pub fn lstsq(design: &Matrix, target: &[f64]) -> Result<(Vec<f64>, usize)> {
    if design.rows() != target.len() {
        return Err(Error::Shape("design rows must equal target length".into()));
    }
    let a = to_na(design);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = smax * design.rows().max(design.cols()) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let b = nalgebra::DVector::from_column_slice(target);
    let x = svd
        .solve(&b, eps)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    Ok((x.iter().copied().collect(), rank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Seed, Stream};

    #[test]
    fn inverse_sqrt_whitens() {
        let c = Matrix::new(2, 2, vec![4.0, 1.0, 1.0, 2.0]).unwrap();
        let w = sym_power(&c, -0.5).unwrap();
        let white = w.matmul(&c).unwrap().matmul(&w).unwrap();
        assert!(white.max_abs_diff(&Matrix::identity(2)) < 1e-12);
    }

    #[test]
    fn singular_covariance_reports_eigenvalue() {
        let c = Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let err = sym_power(&c, -0.5).unwrap_err();
        assert!(err.to_string().contains("smallest eigenvalue"));
    }

    #[test]
    fn orthogonal_draw() {
        let mut rng = Seed(3).stream(Stream::Mixing);
        let q = random_orthogonal(&mut rng, 5);
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(qtq.max_abs_diff(&Matrix::identity(5)) < 1e-12);
    }

    #[test]
    fn lstsq_recovers_exact_fit() {
        let design = Matrix::new(4, 2, vec![1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0, 1.0]).unwrap();
        let y = [3.0, 5.0, 7.0, 9.0];
        let (coef, rank) = lstsq(&design, &y).unwrap();
        assert_eq!(rank, 2);
        assert!((coef[0] - 2.0).abs() < 1e-12 && (coef[1] - 1.0).abs() < 1e-12);
    }
}
