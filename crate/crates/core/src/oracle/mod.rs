//! Population-level checks of the gamma-cross-entropy theory on discrete
//! grids: the binary and multiclass minimizers, the outlier leakage `nu`, and
//! numerical influence functions.

mod influence;
mod instances;
mod suite;

pub use influence::{
    influence_sweep, numeric_influence_function, IfEstimate, IfProbeModel, IfSweep,
};
pub use instances::{
    hand_two_by_two, independent_instance, multiclass_overlap, multiclass_separated,
    separated_suite, tail_overlap,
};
pub use suite::{run_verification, write_checks_csv, Check, VerifyOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::log_sigmoid;
use crate::numerics::Matrix;

/// `p(x|u) = (1 - eps(u)) p*(x|u) + eps(u) delta(x|u)` on finite grids.
///
/// Tables are `nx x nu`; column `u` of `target` and `outlier` is a
/// conditional distribution over the x grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJointDensity {
    pub x_grid: Vec<f64>,
    pub u_grid: Vec<f64>,
    pub p_u: Vec<f64>,
    pub target: Matrix,
    pub outlier: Matrix,
    pub eps: Vec<f64>,
}

const SUM_TOL: f64 = 1e-9;

impl DiscreteJointDensity {
    pub fn new(
        x_grid: Vec<f64>,
        u_grid: Vec<f64>,
        p_u: Vec<f64>,
        target: Matrix,
        outlier: Matrix,
        eps: Vec<f64>,
    ) -> Result<Self> {
        let (nx, nu) = (x_grid.len(), u_grid.len());
        if nx == 0 || nu == 0 {
            return Err(Error::Input("empty grid".into()));
        }
        if target.shape() != (nx, nu) || outlier.shape() != (nx, nu) {
            return Err(Error::Shape(format!("tables must be {nx}x{nu}")));
        }
        if p_u.len() != nu || eps.len() != nu {
            return Err(Error::Shape("p_u and eps need one entry per u".into()));
        }
        let bad = |v: &f64| !(v.is_finite() && *v >= 0.0);
        if p_u.iter().any(bad) || target.as_slice().iter().any(bad) || outlier.as_slice().iter().any(bad)
        {
            return Err(Error::Input("probability tables must be finite and nonnegative".into()));
        }
        if (p_u.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
            return Err(Error::Input("p(u) must sum to 1".into()));
        }
        for j in 0..nu {
            if !(0.0..1.0).contains(&eps[j]) {
                return Err(Error::Input(format!("eps(u={j}) = {} outside [0, 1)", eps[j])));
            }
            if (target.column(j).iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
                return Err(Error::Input(format!("p*(x|u={j}) must sum to 1")));
            }
            let o: f64 = outlier.column(j).iter().sum();
            if eps[j] > 0.0 && (o - 1.0).abs() > SUM_TOL {
                return Err(Error::Input(format!("delta(x|u={j}) must sum to 1")));
            }
        }
        Ok(Self { x_grid, u_grid, p_u, target, outlier, eps })
    }

    pub fn nx(&self) -> usize {
        self.x_grid.len()
    }

    pub fn nu(&self) -> usize {
        self.u_grid.len()
    }

    /// Contaminated conditional `p(x|u)`.
    pub fn conditional(&self, i: usize, j: usize) -> f64 {
        (1.0 - self.eps[j]) * self.target[(i, j)] + self.eps[j] * self.outlier[(i, j)]
    }

    /// Contaminated marginal `p(x)`.
    pub fn p_x(&self) -> Vec<f64> {
        (0..self.nx())
            .map(|i| (0..self.nu()).map(|j| self.conditional(i, j) * self.p_u[j]).sum())
            .collect()
    }

    /// `r*(x, u) = (1 - eps(u)) p*(x|u) / p(x)`; NaN where `p(x) = 0`.
    pub fn optimal_ratio(&self) -> Matrix {
        let px = self.p_x();
        Matrix::from_fn(self.nx(), self.nu(), |i, j| {
            if px[i] > 0.0 {
                (1.0 - self.eps[j]) * self.target[(i, j)] / px[i]
            } else {
                f64::NAN
            }
        })
    }

    /// True if no cell carries both target and outlier mass.
    pub fn is_separated(&self) -> bool {
        (0..self.nu()).all(|j| {
            self.eps[j] == 0.0
                || (0..self.nx()).all(|i| self.target[(i, j)] == 0.0 || self.outlier[(i, j)] == 0.0)
        })
    }
}

/// Inner sum of the objective `J`; `J = -log(sum) / gamma`.
fn j_cell(a: f64, b: f64, log_r: f64, gamma: f64) -> f64 {
    let k = gamma + 1.0;
    let c = gamma / k;
    let neg = if a > 0.0 { a * (c * log_sigmoid(-k * log_r)).exp() } else { 0.0 };
    let pos = if b > 0.0 { b * (c * log_sigmoid(k * log_r)).exp() } else { 0.0 };
    0.5 * (neg + pos)
}

/// `J[r; (1-eps) p*, p(x) p(u)]` for a full ratio table.
pub fn objective_j(density: &DiscreteJointDensity, ratio: &Matrix, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if ratio.shape() != (density.nx(), density.nu()) {
        return Err(Error::Shape("ratio table does not match the grid".into()));
    }
    let px = density.p_x();
    let mut total = 0.0;
    for i in 0..density.nx() {
        for j in 0..density.nu() {
            let (a, b) = cell_weights(density, &px, i, j);
            total += j_cell(a, b, ratio[(i, j)].ln(), gamma);
        }
    }
    Ok(-total.ln() / gamma)
}

/// `j_cell - (a + b) / 2`, accurate when one of the two terms barely moves.
fn j_cell_excess(a: f64, b: f64, log_r: f64, gamma: f64) -> f64 {
    let k = gamma + 1.0;
    let c = gamma / k;
    let neg = if a > 0.0 { a * (c * log_sigmoid(-k * log_r)).exp_m1() } else { 0.0 };
    let pos = if b > 0.0 { b * (c * log_sigmoid(k * log_r)).exp_m1() } else { 0.0 };
    0.5 * (neg + pos)
}

fn cell_weights(density: &DiscreteJointDensity, px: &[f64], i: usize, j: usize) -> (f64, f64) {
    let a = px[i] * density.p_u[j];
    let b = (1.0 - density.eps[j]) * density.target[(i, j)] * density.p_u[j];
    (a, b)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(())
}

/// Maximize a unimodal `f` on `[lo, hi]` to within `tol`.
pub fn golden_section_max(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Search range for `log r`.
pub const LOG_RATIO_BOUND: f64 = 60.0;
pub const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerReport {
    pub fitted: Matrix,
    pub expected: Matrix,
    /// max relative deviation over cells with target mass
    pub max_rel_dev: f64,
    pub compared: usize,
    /// cells with `p* = 0`, where the minimizer runs to the lower bound
    pub off_target: usize,
    /// cells with a zero marginal, left out of the search
    pub skipped: Vec<(usize, usize)>,
    /// `J(r*) <= J(r* (1 +- 0.1))`
    pub locally_minimal: bool,
    /// a coarse scan of each cell finds its best point next to `log r*`
    pub globally_minimal: bool,
}

/// Minimize `J` cell by cell with golden-section search on `log r`.
///
/// `J` is a decreasing function of a sum of per-cell terms, so the table
/// minimizer is the cellwise maximizer of those terms.
pub fn brute_force_minimizer(density: &DiscreteJointDensity, gamma: f64) -> Result<MinimizerReport> {
    check_gamma(gamma)?;
    let (nx, nu) = (density.nx(), density.nu());
    let px = density.p_x();
    let expected = density.optimal_ratio();
    let mut fitted = Matrix::from_fn(nx, nu, |_, _| f64::NAN);
    let mut skipped = Vec::new();
    let mut off_target = 0;
    let mut compared = 0;
    let mut max_rel_dev: f64 = 0.0;
    let mut globally_minimal = true;
    for i in 0..nx {
        for j in 0..nu {
            let (a, b) = cell_weights(density, &px, i, j);
            if a == 0.0 {
                skipped.push((i, j));
                continue;
            }
            let f = |t: f64| j_cell_excess(a, b, t, gamma);
            let t = golden_section_max(f, -LOG_RATIO_BOUND, LOG_RATIO_BOUND, GOLDEN_TOL);
            fitted[(i, j)] = t.exp();
            if b == 0.0 {
                off_target += 1;
                continue;
            }
            compared += 1;
            let rstar = expected[(i, j)];
            max_rel_dev = max_rel_dev.max((t.exp() - rstar).abs() / rstar);
            let step = 0.05;
            let best = (0..=(2.0 * LOG_RATIO_BOUND / step) as usize)
                .map(|s| -LOG_RATIO_BOUND + s as f64 * step)
                .fold((f64::NEG_INFINITY, 0.0), |acc, t| {
                    let v = f(t);
                    if v > acc.0 {
                        (v, t)
                    } else {
                        acc
                    }
                })
                .1;
            if (best - rstar.ln()).abs() > step {
                globally_minimal = false;
            }
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} cells with zero marginal skipped", skipped.len());
    }
    let locally_minimal = local_minimality(density, &expected, gamma)?;
    Ok(MinimizerReport {
        fitted,
        expected,
        max_rel_dev,
        compared,
        off_target,
        skipped,
        locally_minimal,
        globally_minimal,
    })
}

fn local_minimality(density: &DiscreteJointDensity, rstar: &Matrix, gamma: f64) -> Result<bool> {
    let clean = rstar.map(|v| if v.is_nan() { 1.0 } else { v });
    let at = objective_j(density, &clean, gamma)?;
    let mut ok = true;
    for factor in [0.9, 1.1] {
        let moved = clean.map(|v| v * factor);
        ok &= at <= objective_j(density, &moved, gamma)?;
    }
    Ok(ok)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassReport {
    /// `nx x K`, each row normalized to unit sum
    pub fitted: Matrix,
    /// normalized `p*(x|u)` rows
    pub expected: Matrix,
    pub max_abs_dev: f64,
    pub compared: usize,
    pub sweeps: usize,
}

/// Per-x coordinate ascent of the multiclass objective's inner integrand
/// `sum_u r_u^g p(x|u) p(u) / (sum_u r_u^(g+1))^(g/(g+1))` over log scores.
///
/// Uses the contaminated `p(x|u)`; on separated supports it reduces to the
/// leading term of the decomposition. Rows are compared after normalizing to
/// unit sum, which removes the per-x scale invariance.
pub fn brute_force_minimizer_multiclass(
    density: &DiscreteJointDensity,
    gamma: f64,
) -> Result<MulticlassReport> {
    check_gamma(gamma)?;
    let (nx, k_classes) = (density.nx(), density.nu());
    let k = gamma + 1.0;
    let c = gamma / k;
    let mut fitted = Matrix::zeros(nx, k_classes);
    let mut expected = Matrix::zeros(nx, k_classes);
    let mut compared = 0;
    let mut max_abs_dev: f64 = 0.0;
    let mut sweeps = 0;
    for i in 0..nx {
        let w: Vec<f64> = (0..k_classes).map(|j| density.conditional(i, j) * density.p_u[j]).collect();
        if w.iter().all(|&v| v == 0.0) {
            continue;
        }
        let objective = |t: &[f64]| {
            let num = crate::losses::log_sum_exp(
                &t.iter().zip(&w).map(|(tu, wu)| if *wu > 0.0 { gamma * tu + wu.ln() } else { f64::NEG_INFINITY }).collect::<Vec<_>>(),
            );
            let den = crate::losses::log_sum_exp(&t.iter().map(|tu| k * tu).collect::<Vec<_>>());
            num - c * den
        };
        let mut t = vec![0.0; k_classes];
        for sweep in 1..=1000 {
            let mut moved: f64 = 0.0;
            for u in 0..k_classes {
                let mut probe = t.clone();
                let best = golden_section_max(
                    |v| {
                        probe[u] = v;
                        objective(&probe)
                    },
                    -LOG_RATIO_BOUND,
                    LOG_RATIO_BOUND,
                    GOLDEN_TOL,
                );
                moved = moved.max((best - t[u]).abs());
                t[u] = best;
            }
            sweeps = sweeps.max(sweep);
            if moved < 1e-9 {
                break;
            }
        }
        let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let r: Vec<f64> = t.iter().map(|v| (v - m).exp()).collect();
        let rs: f64 = r.iter().sum();
        for u in 0..k_classes {
            fitted[(i, u)] = r[u] / rs;
        }
        let target: Vec<f64> = (0..k_classes).map(|j| density.target[(i, j)]).collect();
        let ts: f64 = target.iter().sum();
        if ts > 0.0 {
            compared += 1;
            for u in 0..k_classes {
                expected[(i, u)] = target[u] / ts;
                max_abs_dev = max_abs_dev.max((fitted[(i, u)] - expected[(i, u)]).abs());
            }
        }
    }
    Ok(MulticlassReport { fitted, expected, max_abs_dev, compared, sweeps })
}

/// Ratio table used in a `nu` evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RatioChoice {
    Optimal,
    /// `r* + shift` in every cell
    Perturbed { shift: f64 },
}

/// Exact `nu = sum_{x,u} sigmoid((g+1) log r)^(g/(g+1)) eps(u) delta(x|u) p(u)`.
pub fn nu_exact(density: &DiscreteJointDensity, ratio: &Matrix, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let k = gamma + 1.0;
    let c = gamma / k;
    let mut total = 0.0;
    for i in 0..density.nx() {
        for j in 0..density.nu() {
            let w = density.eps[j] * density.outlier[(i, j)] * density.p_u[j];
            let r = ratio[(i, j)];
            if w == 0.0 || r == 0.0 || r.is_nan() {
                continue;
            }
            total += w * (c * log_sigmoid(k * r.ln())).exp();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuPoint {
    pub gamma: f64,
    pub nu: f64,
}

pub fn nu_sweep(density: &DiscreteJointDensity, gammas: &[f64], choice: RatioChoice) -> Result<Vec<NuPoint>> {
    let rstar = density.optimal_ratio();
    let ratio = match choice {
        RatioChoice::Optimal => rstar,
        RatioChoice::Perturbed { shift } => rstar.map(|v| v + shift),
    };
    gammas.iter().map(|&gamma| Ok(NuPoint { gamma, nu: nu_exact(density, &ratio, gamma)? })).collect()
}
