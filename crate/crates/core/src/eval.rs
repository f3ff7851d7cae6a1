//! Matched mean absolute correlation and the linear identifiability check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::lstsq;
use crate::numerics::{pearson, Matrix};

/// Maximum-weight perfect matching on a square matrix.
///
/// Returns `assignment` with `assignment[row] = column`. Kuhn-Munkres with
/// potentials, `O(n^3)`.
pub fn hungarian_max(weights: &Matrix) -> Result<Vec<usize>> {
    let n = weights.rows();
    if weights.cols() != n {
        return Err(Error::Shape("matching needs a square weight matrix".into()));
    }
    weights.ensure_finite("matching weights")?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let max = weights.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cost = |i: usize, j: usize| max - weights[(i - 1, j - 1)];
    // 1-based arrays; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// `|corr(estimates[:, i], truth[:, j])|`; zero-variance columns give 0.
pub fn abs_corr_matrix(estimates: &Matrix, truth: &Matrix) -> Result<Matrix> {
    if estimates.rows() != truth.rows() {
        return Err(Error::Shape("estimates and truth differ in length".into()));
    }
    let ec = estimates.columns();
    let tc = truth.columns();
    let mut warned = false;
    let out = Matrix::from_fn(ec.len(), tc.len(), |i, j| match pearson(&ec[i], &tc[j]) {
        Some(r) => r.abs().min(1.0),
        None => {
            if !warned {
                log::warn!("zero-variance column in correlation; entries set to 0");
                warned = true;
            }
            0.0
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// estimates x truth
    pub abs_corr: Matrix,
    /// `assignment[i]` = truth component matched to estimate `i`
    pub assignment: Vec<usize>,
    pub per_component: Vec<f64>,
    pub mean: f64,
}

pub fn matched_mean_abs_corr(estimates: &Matrix, truth: &Matrix) -> Result<MatchReport> {
    if estimates.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "estimates {:?} and truth {:?} differ in shape",
            estimates.shape(),
            truth.shape()
        )));
    }
    let abs_corr = abs_corr_matrix(estimates, truth)?;
    let assignment = hungarian_max(&abs_corr)?;
    let per_component: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| abs_corr[(i, j)]).collect();
    let mean = crate::numerics::mean(&per_component);
    Ok(MatchReport { abs_corr, assignment, per_component, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    pub per_component: Vec<f64>,
    pub mean: f64,
    pub rank_deficient: bool,
}

/// Coefficient of determination of each target column regressed on
/// `[features, 1]` by least squares.
pub fn linear_identifiability_r2(features: &Matrix, targets: &Matrix) -> Result<R2Report> {
    let (t_len, d) = features.shape();
    if targets.rows() != t_len {
        return Err(Error::Shape("features and targets differ in length".into()));
    }
    let design = Matrix::from_fn(t_len, d + 1, |t, j| if j < d { features[(t, j)] } else { 1.0 });
    let mut rank_deficient = false;
    let mut per_component = Vec::with_capacity(targets.cols());
    for y in targets.columns() {
        let (coef, rank) = lstsq(&design, &y)?;
        if rank < d + 1 {
            rank_deficient = true;
        }
        let ybar = crate::numerics::mean(&y);
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for (t, &yt) in y.iter().enumerate() {
            let fit = crate::numerics::dot(design.row(t), &coef);
            ss_res += (yt - fit) * (yt - fit);
            ss_tot += (yt - ybar) * (yt - ybar);
        }
        per_component.push(if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 });
    }
    if rank_deficient {
        log::warn!("identifiability regression design is rank deficient; used the pseudo-inverse");
    }
    let mean = crate::numerics::mean(&per_component);
    Ok(R2Report { per_component, mean, rank_deficient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Seed, Stream};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(t: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = Seed(seed).stream(Stream::Sources);
        Matrix::from_fn(t, d, |_, _| rng.sample(StandardNormal))
    }

    fn brute_force(w: &Matrix) -> f64 {
        fn go(w: &Matrix, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == w.rows() {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for j in 0..w.cols() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[(row, j)] + go(w, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(w, 0, &mut vec![false; w.cols()])
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = Seed(1).stream(Stream::Init);
        for n in 1..=6 {
            for _ in 0..20 {
                let w = Matrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
                let a = hungarian_max(&w).unwrap();
                let mut seen = a.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let value: f64 = a.iter().enumerate().map(|(i, &j)| w[(i, j)]).sum();
                assert!((value - brute_force(&w)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_and_flipped_permuted_score_one() {
        let s = gaussian(500, 3, 2);
        assert!((matched_mean_abs_corr(&s, &s).unwrap().mean - 1.0).abs() < 1e-12);
        let flipped = Matrix::from_fn(500, 3, |t, j| match j {
            0 => -s[(t, 2)],
            1 => 3.0 * s[(t, 0)],
            _ => -0.5 * s[(t, 1)],
        });
        let r = matched_mean_abs_corr(&flipped, &s).unwrap();
        assert!((r.mean - 1.0).abs() < 1e-12);
        assert_eq!(r.assignment, vec![2, 0, 1]);
    }

    #[test]
    fn additive_unit_noise_gives_inverse_sqrt_two() {
        let s = gaussian(100_000, 2, 3);
        let n = gaussian(100_000, 2, 4);
        let est = Matrix::from_fn(100_000, 2, |t, j| s[(t, j)] + n[(t, j)]);
        let r = matched_mean_abs_corr(&est, &s).unwrap();
        for c in r.per_component {
            assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01, "{c}");
        }
    }

    #[test]
    fn zero_variance_column_is_zero() {
        let s = gaussian(100, 2, 5);
        let mut est = s.clone();
        for t in 0..100 {
            est[(t, 1)] = 2.0;
        }
        let r = matched_mean_abs_corr(&est, &s).unwrap();
        assert_eq!(r.abs_corr[(1, 0)], 0.0);
        assert!((r.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_features_give_unit_r2() {
        let q = gaussian(1000, 3, 6);
        let mut rng = Seed(6).stream(Stream::Mixing);
        let a = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let h = q.matmul_t(&a).unwrap().map(|v| v + 0.7);
        let r = linear_identifiability_r2(&h, &q).unwrap();
        assert!(r.per_component.iter().all(|&v| (v - 1.0).abs() < 1e-10), "{r:?}");
        assert!(!r.rank_deficient);
    }

    #[test]
    fn independent_features_give_small_r2() {
        let r = linear_identifiability_r2(&gaussian(10_000, 2, 7), &gaussian(10_000, 2, 8)).unwrap();
        assert!(r.mean < 0.05);
    }

    #[test]
    fn duplicate_feature_falls_back() {
        let q = gaussian(200, 1, 9);
        let h = Matrix::from_fn(200, 2, |t, _| q[(t, 0)]);
        let r = linear_identifiability_r2(&h, &q).unwrap();
        assert!(r.rank_deficient);
        assert!((r.mean - 1.0).abs() < 1e-10);
    }
}
