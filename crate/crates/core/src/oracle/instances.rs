//! Fixed discrete instances used by the verification suite.

use super::DiscreteJointDensity;
use crate::numerics::Matrix;

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Normalized column from an unnormalized density restricted to `keep`.
fn column(x: &[f64], density: impl Fn(f64) -> f64, keep: impl Fn(f64) -> bool) -> Vec<f64> {
    let raw: Vec<f64> = x.iter().map(|&v| if keep(v) { density(v) } else { 0.0 }).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn gauss(mu: f64, sd: f64) -> impl Fn(f64) -> f64 {
    move |x| (-0.5 * ((x - mu) / sd).powi(2)).exp()
}

fn laplace(mu: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |x| (-(x - mu).abs() / b).exp()
}

fn build(x: Vec<f64>, p_u: Vec<f64>, target: Vec<Vec<f64>>, outlier: Vec<Vec<f64>>, eps: Vec<f64>) -> DiscreteJointDensity {
    let u = (0..p_u.len()).map(|j| j as f64).collect();
    DiscreteJointDensity::new(
        x,
        u,
        p_u,
        Matrix::from_columns(&target).expect("columns agree"),
        Matrix::from_columns(&outlier).expect("columns agree"),
        eps,
    )
    .expect("fixed instance is valid")
}

/// `p*(x|u) = p(x)`, no outliers: `r* = 1` everywhere.
pub fn independent_instance() -> DiscreteJointDensity {
    let col = vec![0.2, 0.3, 0.5];
    build(vec![0.0, 1.0, 2.0], vec![0.4, 0.6], vec![col.clone(), col.clone()], vec![col.clone(), col], vec![0.0, 0.0])
}

/// Ratios by hand: `p(x) = (1/2, 1/2)`, `r* = [[1.5, 0.5], [0.5, 1.5]]`.
pub fn hand_two_by_two() -> DiscreteJointDensity {
    let t = vec![vec![0.75, 0.25], vec![0.25, 0.75]];
    build(vec![0.0, 1.0], vec![0.5, 0.5], t.clone(), t, vec![0.0, 0.0])
}

/// Three instances whose target and outlier supports never share a cell.
pub fn separated_suite(eps: f64) -> Vec<(String, DiscreteJointDensity)> {
    let mut out = Vec::new();

    let x: Vec<f64> = (0..4).map(|i| i as f64).collect();
    let target = (0..4).map(|j| vec![0.2 + 0.15 * j as f64, 0.8 - 0.15 * j as f64, 0.0, 0.0]).collect();
    let outlier = (0..4).map(|j| vec![0.0, 0.0, 0.3 + 0.1 * j as f64, 0.7 - 0.1 * j as f64]).collect();
    out.push(("grid4".to_string(), build(x, vec![0.25; 4], target, outlier, vec![eps; 4])));

    let x = grid(-4.0, 8.0, 64);
    let nu = 8;
    let target = (0..nu).map(|j| column(&x, gauss(-1.5 + 0.3 * j as f64, 1.0), |v| v < 3.0)).collect();
    let outlier = (0..nu).map(|j| column(&x, gauss(5.0 + 0.2 * j as f64, 1.0), |v| v >= 3.0)).collect();
    out.push(("gauss64".to_string(), build(x.clone(), vec![1.0 / nu as f64; nu], target, outlier, vec![eps; nu])));

    let target = (0..nu).map(|j| column(&x, laplace(-1.0 + 0.25 * j as f64, 0.7), |v| v < 3.0)).collect();
    let outlier = (0..nu).map(|_| column(&x, laplace(6.0, 1.0), |v| v >= 3.0)).collect();
    let total: f64 = (0..nu).map(|j| 1.0 + j as f64).sum();
    let p_u = (0..nu).map(|j| (1.0 + j as f64) / total).collect();
    let eps_u = (0..nu).map(|j| eps * (0.6 + 0.8 * j as f64 / (nu - 1) as f64)).collect();
    out.push(("laplace64-heterogeneous".to_string(), build(x, p_u, target, outlier, eps_u)));
    out
}

/// Gaussian targets with an outlier bump sitting on their upper tail.
pub fn tail_overlap(eps: f64) -> DiscreteJointDensity {
    let x = grid(-4.0, 8.0, 64);
    let nu = 4;
    let target = (0..nu).map(|j| column(&x, gauss(-0.5 + 0.3 * j as f64, 1.0), |_| true)).collect();
    let outlier = (0..nu).map(|_| column(&x, gauss(4.5, 0.7), |_| true)).collect();
    build(x, vec![0.25; nu], target, outlier, vec![eps; nu])
}

/// Three classes on the lower part of the grid, outliers uniform above it.
pub fn multiclass_separated(eps: f64) -> DiscreteJointDensity {
    let x = grid(-6.0, 10.0, 64);
    let target = [-2.0, 0.0, 2.0].iter().map(|&m| column(&x, gauss(m, 1.0), |v| v < 4.5)).collect();
    let outlier = (0..3).map(|_| column(&x, |_| 1.0, |v| v >= 4.5)).collect();
    build(x, vec![1.0 / 3.0; 3], target, outlier, vec![eps; 3])
}

/// Two classes with outliers overlapping both targets.
pub fn multiclass_overlap() -> DiscreteJointDensity {
    let x = grid(-4.0, 6.0, 32);
    let target = [-1.0, 1.0].iter().map(|&m| column(&x, gauss(m, 1.0), |_| true)).collect();
    let outlier = (0..2).map(|j| column(&x, gauss(2.0 + j as f64, 1.0), |_| true)).collect();
    build(x, vec![0.5, 0.5], target, outlier, vec![0.3, 0.3])
}
