//! Permutation HSIC test with Gaussian kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{permutation, Seed, Stream};

pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsicResult {
    /// biased estimate `tr(K H L H) / n^2`
    pub statistic: f64,
    /// `(1 + #{null >= statistic}) / (1 + permutations)`
    pub p_value: f64,
    pub permutations: usize,
    pub bandwidths: (f64, f64),
}

/// Median of the nonzero pairwise distances.
pub fn median_bandwidth(a: &[f64]) -> Result<f64> {
    let mut d: Vec<f64> = Vec::with_capacity(a.len() * (a.len() - 1) / 2);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let v = (a[i] - a[j]).abs();
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return Err(Error::Input("constant series has no kernel bandwidth".into()));
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(*m)
}

fn gram(a: &[f64], bandwidth: f64) -> Vec<f64> {
    let n = a.len();
    let s = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = (-(a[i] - a[j]).powi(2) * s).exp();
        }
    }
    k
}

/// `H K H` for the Gaussian Gram matrix `K`, row-major `n x n`.
fn centered_gram(a: &[f64], bandwidth: f64) -> Vec<f64> {
    let n = a.len();
    let mut k = gram(a, bandwidth);
    let row: Vec<f64> = (0..n).map(|i| k[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let all = row.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] += all - row[i] - row[j];
        }
    }
    k
}

/// `sum_ij Kc[i, j] L[p(i), p(j)] / n^2`; centering one factor suffices.
fn permuted_statistic(kc: &[f64], l: &[f64], p: &[usize]) -> f64 {
    let n = p.len();
    let mut total = 0.0;
    for i in 0..n {
        let li = &l[p[i] * n..(p[i] + 1) * n];
        let ki = &kc[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += ki[j] * li[p[j]];
        }
        total += acc;
    }
    total / (n * n) as f64
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape("HSIC inputs differ in length".into()));
    }
    if a.len() < MIN_SAMPLES {
        return Err(Error::Input(format!("HSIC needs at least {MIN_SAMPLES} samples, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Input("HSIC inputs must be finite".into()));
    }
    Ok(())
}

pub fn hsic_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let kc = centered_gram(a, median_bandwidth(a)?);
    let l = gram(b, median_bandwidth(b)?);
    let id: Vec<usize> = (0..a.len()).collect();
    Ok(permuted_statistic(&kc, &l, &id).max(0.0))
}

/// `permutations` shuffles of `0..n` from the HSIC stream of `seed`.
pub fn permutation_list(n: usize, permutations: usize, seed: Seed) -> Vec<Vec<usize>> {
    let mut rng = seed.stream(Stream::Hsic);
    (0..permutations).map(|_| permutation(&mut rng, n)).collect()
}

/// Test with an explicit list of permutations applied to `b`.
pub fn hsic_test_with(a: &[f64], b: &[f64], perms: &[Vec<usize>]) -> Result<HsicResult> {
    check_pair(a, b)?;
    if perms.is_empty() || perms.iter().any(|p| p.len() != a.len()) {
        return Err(Error::Parameter("permutations must be nonempty and match the sample size".into()));
    }
    let bandwidths = (median_bandwidth(a)?, median_bandwidth(b)?);
    let kc = centered_gram(a, bandwidths.0);
    let l = gram(b, bandwidths.1);
    let id: Vec<usize> = (0..a.len()).collect();
    let statistic = permuted_statistic(&kc, &l, &id);
    let null = crate::parallel::map_indexed(perms.len(), |i| permuted_statistic(&kc, &l, &perms[i]));
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    Ok(HsicResult {
        statistic: statistic.max(0.0),
        p_value: (1 + exceed) as f64 / (1 + perms.len()) as f64,
        permutations: perms.len(),
        bandwidths,
    })
}

pub fn hsic_test(a: &[f64], b: &[f64], permutations: usize, seed: Seed) -> Result<HsicResult> {
    hsic_test_with(a, b, &permutation_list(a.len(), permutations, seed))
}
