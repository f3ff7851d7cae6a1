//! Numerical influence functions for a one-parameter ratio model.
//!
//! The probe model is `r_theta(x, u) = exp(theta u x)` with `u in {-1, +1}`
//! and `x | u` a discretized `N(shift u, 1)`. Contamination adds a point mass
//! at `(xbar, ubar)` to the joint and, through the marginals, to the product
//! distribution used for the negative class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::log_sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfProbeModel {
    pub gamma: f64,
    pub x_grid: Vec<f64>,
    /// `p*(x | u = -1)` and `p*(x | u = +1)`
    pub conditional: [Vec<f64>; 2],
    /// `(xbar, ubar)` with `ubar in {-1, +1}`
    pub outlier: (f64, f64),
    /// decreasing contamination ratios in `(0, 0.05]`
    pub eps_grid: Vec<f64>,
}

/// One weighted atom of the estimating sum.
#[derive(Debug, Clone, Copy)]
struct Atom {
    phi: f64,
    joint: f64,
    product: f64,
}

impl IfProbeModel {
    pub fn gaussian(gamma: f64, shift: f64, grid_points: usize, outlier: (f64, f64)) -> Self {
        let x_grid: Vec<f64> = (0..grid_points)
            .map(|i| -5.0 + 10.0 * i as f64 / (grid_points - 1) as f64)
            .collect();
        let column = |mu: f64| {
            let raw: Vec<f64> = x_grid.iter().map(|x| (-0.5 * (x - mu).powi(2)).exp()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let conditional = [column(-shift), column(shift)];
        Self { gamma, x_grid, conditional, outlier, eps_grid: vec![4e-3, 2e-3, 1e-3] }
    }

    /// Standard deviation of the clean x marginal.
    pub fn target_scale(&self) -> f64 {
        let px: Vec<f64> = (0..self.x_grid.len()).map(|i| 0.5 * (self.conditional[0][i] + self.conditional[1][i])).collect();
        let m: f64 = px.iter().zip(&self.x_grid).map(|(p, x)| p * x).sum();
        px.iter().zip(&self.x_grid).map(|(p, x)| p * (x - m).powi(2)).sum::<f64>().sqrt()
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.outlier.1 != 1.0 && self.outlier.1 != -1.0 {
            return Err(Error::Parameter("outlier u must be -1 or +1".into()));
        }
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|&e| !(e > 0.0 && e <= 0.05)) {
            return Err(Error::Parameter("eps grid must lie in (0, 0.05]".into()));
        }
        if self.conditional.iter().any(|c| c.len() != self.x_grid.len()) {
            return Err(Error::Shape("conditionals must match the x grid".into()));
        }
        Ok(())
    }

    /// Atoms of the contaminated joint and product distributions at ratio `eps`.
    fn atoms(&self, eps: f64) -> Vec<Atom> {
        let us = [-1.0, 1.0];
        let (xbar, ubar) = self.outlier;
        let n = self.x_grid.len();
        let px: Vec<f64> = (0..n).map(|i| 0.5 * (self.conditional[0][i] + self.conditional[1][i])).collect();
        let mut atoms = Vec::with_capacity(2 * n + 2);
        for (j, &u) in us.iter().enumerate() {
            let hit = if u == ubar { 1.0 } else { 0.0 };
            for i in 0..n {
                let x = self.x_grid[i];
                atoms.push(Atom {
                    phi: u * x,
                    joint: (1.0 - eps) * self.conditional[j][i] * 0.5,
                    product: (1.0 - eps) * px[i] * ((1.0 - eps) * 0.5 + eps * hit),
                });
            }
            atoms.push(Atom {
                phi: u * xbar,
                joint: eps * hit,
                product: eps * ((1.0 - eps) * 0.5 + eps * hit),
            });
        }
        atoms
    }

    /// Estimating function: proportional to the derivative of the objective's
    /// inner integral with respect to `theta`.
    ///
    /// `psi = sum phi [P1 s^c (1 - s) - P0 (1 - s)^c s]`, `s = sigmoid(k theta phi)`.
    pub fn psi(&self, theta: f64, eps: f64) -> f64 {
        let k = self.gamma + 1.0;
        let c = self.gamma / k;
        self.atoms(eps)
            .iter()
            .map(|a| {
                let z = k * theta * a.phi;
                let (ls, lc) = (log_sigmoid(z), log_sigmoid(-z));
                a.phi * (a.joint * (c * ls + lc).exp() - a.product * (c * lc + ls).exp())
            })
            .sum()
    }

    /// Root of `psi(., eps)` nearest `reference` where `psi` crosses from
    /// positive to negative.
    pub fn solve(&self, eps: f64, reference: f64) -> Result<f64> {
        let (lo, hi, step) = (-10.0, 10.0, 0.01);
        let steps = ((hi - lo) / step) as usize;
        let mut best: Option<(f64, f64)> = None;
        let mut prev = (lo, self.psi(lo, eps));
        for s in 1..=steps {
            let t = lo + s as f64 * step;
            let v = self.psi(t, eps);
            if prev.1 > 0.0 && v <= 0.0 {
                let mid = 0.5 * (prev.0 + t);
                if best.is_none_or(|(a, b)| (mid - reference).abs() < (0.5 * (a + b) - reference).abs()) {
                    best = Some((prev.0, t));
                }
            }
            prev = (t, v);
        }
        let (mut a, mut b) = best.ok_or_else(|| {
            Error::RootFinding(format!(
                "no sign change of psi on [{lo}, {hi}] (gamma {}, eps {eps}, outlier {:?}; psi({lo}) = {:.3e}, psi({hi}) = {:.3e})",
                self.gamma,
                self.outlier,
                self.psi(lo, eps),
                self.psi(hi, eps)
            ))
        })?;
        loop {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if self.psi(m, eps) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfEstimate {
    pub theta: f64,
    /// `(theta - theta_eps) / eps` per grid entry
    pub finite_differences: Vec<f64>,
    /// first-order Richardson extrapolation of the last two entries
    pub extrapolated: f64,
    /// `psi_eps / psi_theta` at `eps = 0`
    pub linearized: f64,
    /// successive difference ratio; near `eps_k / eps_(k+1)` when converging
    pub richardson_ratio: Option<f64>,
}

pub fn numeric_influence_function(model: &IfProbeModel) -> Result<IfEstimate> {
    model.validate()?;
    let theta = model.solve(0.0, 0.5)?;
    let finite_differences = model
        .eps_grid
        .iter()
        .map(|&e| Ok((theta - model.solve(e, theta)?) / e))
        .collect::<Result<Vec<f64>>>()?;
    let n = finite_differences.len();
    let extrapolated = if n >= 2 {
        let (e1, e2) = (model.eps_grid[n - 2], model.eps_grid[n - 1]);
        let (d1, d2) = (finite_differences[n - 2], finite_differences[n - 1]);
        (e1 * d2 - e2 * d1) / (e1 - e2)
    } else {
        finite_differences[0]
    };
    let richardson_ratio = (n >= 3).then(|| {
        let d = &finite_differences[n - 3..];
        (d[0] - d[1]) / (d[1] - d[2])
    });
    // psi is quadratic in eps at fixed theta, so this one-sided stencil is exact
    let h = 1e-3;
    let psi_eps = (4.0 * model.psi(theta, h) - model.psi(theta, 2.0 * h) - 3.0 * model.psi(theta, 0.0)) / (2.0 * h);
    let dt = 1e-5;
    let psi_theta = (model.psi(theta + dt, 0.0) - model.psi(theta - dt, 0.0)) / (2.0 * dt);
    Ok(IfEstimate { theta, finite_differences, extrapolated, linearized: psi_eps / psi_theta, richardson_ratio })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfSweep {
    pub gamma: f64,
    /// outlier distance in units of the target scale
    pub magnitudes: Vec<f64>,
    pub abs_if: Vec<f64>,
}

impl IfSweep {
    fn tail(&self, from: f64) -> Result<(f64, Vec<f64>)> {
        let k = self
            .magnitudes
            .iter()
            .position(|&m| m == from)
            .ok_or_else(|| Error::Parameter(format!("magnitude {from} not in the sweep")))?;
        Ok((self.abs_if[k], self.abs_if[k + 1..].to_vec()))
    }

    /// Max of `|IF|` beyond `from` is at most `factor` times `|IF(from)|`.
    pub fn bounded_after(&self, from: f64, factor: f64) -> Result<bool> {
        let (base, tail) = self.tail(from)?;
        Ok(tail.iter().all(|&v| v <= factor * base))
    }

    /// `|IF|` strictly increases from `from` onwards.
    pub fn increasing_after(&self, from: f64) -> Result<bool> {
        let (base, tail) = self.tail(from)?;
        let mut prev = base;
        for v in tail {
            if v <= prev {
                return Ok(false);
            }
            prev = v;
        }
        Ok(true)
    }
}

/// `|IF|` for outliers at `(m * scale, ubar)` along `magnitudes`.
pub fn influence_sweep(gamma: f64, magnitudes: &[f64], ubar: f64) -> Result<IfSweep> {
    let mut probe = IfProbeModel::gaussian(gamma, 0.5, 64, (0.0, ubar));
    let scale = probe.target_scale();
    let mut abs_if = Vec::with_capacity(magnitudes.len());
    for &m in magnitudes {
        probe.outlier = (m * scale, ubar);
        abs_if.push(numeric_influence_function(&probe)?.extrapolated.abs());
    }
    Ok(IfSweep { gamma, magnitudes: magnitudes.to_vec(), abs_if })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGNITUDES: [f64; 5] = [2.0, 5.0, 10.0, 50.0, 100.0];

    #[test]
    fn clean_root_is_positive_and_stable() {
        let m = IfProbeModel::gaussian(1.0, 0.5, 64, (0.5, 1.0));
        let t = m.solve(0.0, 0.5).unwrap();
        assert!(t > 0.0);
        assert!(m.psi(t, 0.0).abs() < 1e-12);
    }

    #[test]
    fn outlier_at_mode_gives_stable_influence() {
        let mut m = IfProbeModel::gaussian(1.0, 0.5, 64, (0.5, 1.0));
        m.eps_grid = vec![1e-2, 1e-3];
        let r = numeric_influence_function(&m).unwrap();
        let (a, b) = (r.finite_differences[0], r.finite_differences[1]);
        assert!((a - b).abs() < 0.1 * b.abs(), "{a} {b}");
    }

    #[test]
    fn finite_differences_match_linearization() {
        for gamma in [0.0, 0.5, 1.0] {
            let m = IfProbeModel::gaussian(gamma, 0.5, 64, (3.0, 1.0));
            let r = numeric_influence_function(&m).unwrap();
            assert!((r.extrapolated - r.linearized).abs() < 1e-4 * r.linearized.abs().max(1.0), "{r:?}");
            let ratio = r.richardson_ratio.unwrap();
            assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
        }
    }

    #[test]
    fn robust_influence_is_bounded() {
        let s = influence_sweep(1.0, &MAGNITUDES, 1.0).unwrap();
        assert!(s.bounded_after(10.0, 1.05).unwrap(), "{s:?}");
    }

    #[test]
    fn logistic_influence_grows() {
        let s = influence_sweep(0.0, &MAGNITUDES, 1.0).unwrap();
        assert!(s.increasing_after(10.0).unwrap(), "{s:?}");
    }

    #[test]
    fn bad_eps_grid_rejected() {
        let mut m = IfProbeModel::gaussian(1.0, 0.5, 16, (0.0, 1.0));
        m.eps_grid = vec![0.1];
        assert!(numeric_influence_function(&m).is_err());
        m.eps_grid = vec![1e-3];
        m.outlier.1 = 0.0;
        assert!(numeric_influence_function(&m).is_err());
    }
}
