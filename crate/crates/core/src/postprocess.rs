//! Symmetric FastICA with the tanh contrast.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::{random_orthogonal, sym_power};
use crate::numerics::Matrix;
use crate::rng::{Seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastIcaOptions {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    500
}
fn default_tol() -> f64 {
    1e-6
}

impl Default for FastIcaOptions {
    fn default() -> Self {
        Self { max_iter: default_max_iter(), tol: default_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastIcaResult {
    pub mean: Vec<f64>,
    /// maps centered features to components: `s = (h - mean) U^T`
    pub unmixing: Matrix,
    pub components: Matrix,
    pub iterations: usize,
    pub converged: bool,
}

impl FastIcaResult {
    pub fn transform(&self, features: &Matrix) -> Result<Matrix> {
        let mut c = features.clone();
        for t in 0..c.rows() {
            for (v, m) in c.row_mut(t).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        c.matmul_t(&self.unmixing)
    }
}

pub fn fastica(features: &Matrix, options: FastIcaOptions, seed: Seed) -> Result<FastIcaResult> {
    let (t_len, n) = features.shape();
    if n < 2 {
        return Err(Error::Input("FastICA needs at least two features".into()));
    }
    if t_len <= n {
        return Err(Error::Input("FastICA needs more samples than features".into()));
    }
    features.ensure_finite("FastICA input")?;

    let mean = features.column_means();
    let whitening = sym_power(&features.covariance(), -0.5)?;
    let mut centered = features.clone();
    for t in 0..t_len {
        for (v, m) in centered.row_mut(t).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let z = centered.matmul_t(&whitening)?;

    let mut rng = seed.stream(Stream::FastIca);
    let mut w = random_orthogonal(&mut rng, n);
    let mut converged = false;
    let mut iterations = 0;
    let inv_t = 1.0 / t_len as f64;
    while iterations < options.max_iter {
        iterations += 1;
        let y = z.matmul_t(&w)?;
        let mut next = Matrix::zeros(n, n);
        let mut mean_dg = vec![0.0; n];
        for t in 0..t_len {
            let zt = z.row(t);
            for i in 0..n {
                let g = y[(t, i)].tanh();
                mean_dg[i] += 1.0 - g * g;
                for (o, zv) in next.row_mut(i).iter_mut().zip(zt) {
                    *o += g * zv;
                }
            }
        }
        for i in 0..n {
            let dg = mean_dg[i] * inv_t;
            for j in 0..n {
                next[(i, j)] = next[(i, j)] * inv_t - dg * w[(i, j)];
            }
        }
        let next = symmetric_decorrelation(&next)?;
        let lim = (0..n)
            .map(|i| (1.0 - crate::numerics::dot(next.row(i), w.row(i)).abs()).abs())
            .fold(0.0, f64::max);
        w = next;
        if lim < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("FastICA did not converge in {} iterations", options.max_iter);
    }
    let unmixing = w.matmul(&whitening)?;
    let components = z.matmul_t(&w)?;
    Ok(FastIcaResult { mean, unmixing, components, iterations, converged })
}

/// `(W W^T)^{-1/2} W`
fn symmetric_decorrelation(w: &Matrix) -> Result<Matrix> {
    let gram = w.matmul_t(w)?;
    sym_power(&gram, -0.5)?.matmul(w)
}
