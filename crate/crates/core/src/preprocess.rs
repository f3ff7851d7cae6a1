//! Whitening of observations, standard and outlier-downweighting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::sym_power;
use crate::numerics::{dot, Matrix};

pub const DEFAULT_ROBUST_GAMMA: f64 = 0.2;
pub const DEFAULT_ROBUST_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WhiteningMethod {
    StandardZca,
    /// Iteratively reweighted mean and covariance with weights
    /// `exp(-(gamma / 2) * mahalanobis^2)`.
    RobustGamma { gamma: f64, iterations: usize },
}

impl WhiteningMethod {
    pub fn robust_default() -> Self {
        WhiteningMethod::RobustGamma {
            gamma: DEFAULT_ROBUST_GAMMA,
            iterations: DEFAULT_ROBUST_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningTransform {
    pub mean: Vec<f64>,
    /// symmetric `C^{-1/2}`
    pub matrix: Matrix,
    pub method: WhiteningMethod,
}

impl WhiteningTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            matrix: Matrix::identity(dim),
            method: WhiteningMethod::StandardZca,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn fit_whitening(x: &Matrix, method: WhiteningMethod) -> Result<WhiteningTransform> {
    let (t_len, dim) = x.shape();
    if t_len <= dim {
        return Err(Error::Input(format!(
            "whitening needs more samples ({t_len}) than dimensions ({dim})"
        )));
    }
    x.ensure_finite("whitening input")?;
    let (mean, cov) = match method {
        WhiteningMethod::StandardZca => (x.column_means(), x.covariance()),
        WhiteningMethod::RobustGamma { gamma, iterations } => {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::Config(format!("robust whitening gamma must be > 0, got {gamma}")));
            }
            robust_moments(x, gamma, iterations)?
        }
    };
    let matrix = sym_power(&cov, -0.5)?;
    Ok(WhiteningTransform { mean, matrix, method })
}

/// `(x - mean) W^T`
pub fn apply_whitening(transform: &WhiteningTransform, x: &Matrix) -> Result<Matrix> {
    if x.cols() != transform.dim() {
        return Err(Error::Shape(format!(
            "transform expects {} columns, data has {}",
            transform.dim(),
            x.cols()
        )));
    }
    let mut centered = x.clone();
    for t in 0..centered.rows() {
        for (v, m) in centered.row_mut(t).iter_mut().zip(&transform.mean) {
            *v -= m;
        }
    }
    centered.matmul_t(&transform.matrix)
}

/// Per-sample weights `exp(-(gamma/2) d^2)` for the given moments.
pub fn robust_weights(x: &Matrix, mean: &[f64], cov: &Matrix, gamma: f64) -> Result<Vec<f64>> {
    let prec = sym_power(cov, -1.0)?;
    Ok((0..x.rows())
        .map(|t| {
            let c: Vec<f64> = x.row(t).iter().zip(mean).map(|(a, b)| a - b).collect();
            let d2: f64 = (0..c.len()).map(|i| c[i] * dot(prec.row(i), &c)).sum();
            (-0.5 * gamma * d2).exp()
        })
        .collect())
}

fn robust_moments(x: &Matrix, gamma: f64, iterations: usize) -> Result<(Vec<f64>, Matrix)> {
    let (t_len, dim) = x.shape();
    let mut mean = x.column_means();
    let mut cov = x.covariance();
    for _ in 0..iterations {
        let w = robust_weights(x, &mean, &cov, gamma)?;
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Numerical("all robust whitening weights vanished".into()));
        }
        let mut next_mean = vec![0.0; dim];
        for t in 0..t_len {
            for (m, v) in next_mean.iter_mut().zip(x.row(t)) {
                *m += w[t] / total * v;
            }
        }
        let mut next_cov = Matrix::zeros(dim, dim);
        for t in 0..t_len {
            let c: Vec<f64> = x.row(t).iter().zip(&next_mean).map(|(a, b)| a - b).collect();
            let wt = w[t] / total;
            for i in 0..dim {
                for j in 0..dim {
                    next_cov[(i, j)] += wt * c[i] * c[j];
                }
            }
        }
        // Gaussian consistency: the weighted covariance shrinks by 1/(1+gamma)
        mean = next_mean;
        cov = next_cov.map(|v| v * (1.0 + gamma));
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::singular_values;
    use crate::rng::{Seed, Stream};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(t: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = Seed(seed).stream(Stream::Sources);
        Matrix::from_fn(t, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn white_input_gives_near_identity() {
        let x = gaussian(10_000, 3, 1);
        let w = fit_whitening(&x, WhiteningMethod::StandardZca).unwrap();
        let diff = w.matrix.sub(&Matrix::identity(3)).unwrap();
        assert!(singular_values(&diff)[0] < 0.05);
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let mut rng = Seed(2).stream(Stream::Mixing);
        let a = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let x = gaussian(500, 3, 2).matmul(&a).unwrap();
        let w = fit_whitening(&x, WhiteningMethod::StandardZca).unwrap();
        let z = apply_whitening(&w, &x).unwrap();
        assert!(z.covariance().max_abs_diff(&Matrix::identity(3)) < 1e-8);
    }

    #[test]
    fn held_out_split_is_near_white() {
        let x = gaussian(20_000, 2, 3).map(|v| 2.0 * v + 1.0);
        let train = x.slice_rows(0, 10_000);
        let test = x.slice_rows(10_000, 20_000);
        let w = fit_whitening(&train, WhiteningMethod::StandardZca).unwrap();
        let z = apply_whitening(&w, &test).unwrap();
        assert!(z.covariance().max_abs_diff(&Matrix::identity(2)) < 0.1);
    }

    #[test]
    fn identity_transform_is_noop() {
        let x = gaussian(10, 2, 4);
        let z = apply_whitening(&WhiteningTransform::identity(2), &x).unwrap();
        assert_eq!(z, x);
        assert!(apply_whitening(&WhiteningTransform::identity(3), &x).is_err());
    }

    #[test]
    fn robust_covariance_resists_far_outliers() {
        let t = 4000;
        let clean = gaussian(t, 2, 5);
        let mut x = clean.clone();
        let mut rng = Seed(5).stream(Stream::Outliers);
        let mut inliers = Vec::new();
        for i in 0..t {
            if rng.random::<f64>() < 0.1 {
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                x[(i, 0)] = 20.0 * angle.cos();
                x[(i, 1)] = 20.0 * angle.sin();
            } else {
                inliers.push(i);
            }
        }
        let reference = clean.select_rows(&inliers).covariance();
        let std = fit_whitening(&x, WhiteningMethod::StandardZca).unwrap();
        let rob = fit_whitening(&x, WhiteningMethod::robust_default()).unwrap();
        let cov_of = |w: &WhiteningTransform| sym_power(&w.matrix, -2.0).unwrap();
        let e_std = cov_of(&std).sub(&reference).unwrap().frobenius_norm();
        let e_rob = cov_of(&rob).sub(&reference).unwrap().frobenius_norm();
        assert!(e_rob < e_std, "robust {e_rob} vs standard {e_std}");
        assert!(e_rob < 0.3, "{e_rob}");
    }

    #[test]
    fn robust_weights_decrease_with_distance() {
        let x = Matrix::from_fn(5, 1, |i, _| i as f64);
        let w = robust_weights(&x, &[0.0], &Matrix::identity(1), 0.2).unwrap();
        assert!(w[0] == 1.0);
        assert!(w.windows(2).all(|p| p[1] < p[0] && p[1] > 0.0));
    }

    #[test]
    fn rank_deficient_input_fails() {
        let x = Matrix::from_fn(10, 2, |i, _| i as f64);
        let err = fit_whitening(&x, WhiteningMethod::StandardZca).unwrap_err();
        assert!(err.to_string().contains("smallest eigenvalue"));
        assert!(fit_whitening(&Matrix::zeros(2, 2), WhiteningMethod::StandardZca).is_err());
    }

    #[test]
    fn transform_round_trips_through_json() {
        let w = fit_whitening(&gaussian(50, 2, 6), WhiteningMethod::robust_default()).unwrap();
        let back: WhiteningTransform =
            serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        assert_eq!(back, w);
    }
}
