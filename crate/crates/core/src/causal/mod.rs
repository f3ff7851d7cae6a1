//! Bivariate causal direction from nonlinear ICA disturbances and HSIC tests.

mod hsic;
mod pipeline;

pub use hsic::{
    hsic_statistic, hsic_test, hsic_test_with, median_bandwidth, permutation_list, HsicResult,
    MIN_SAMPLES,
};
pub use pipeline::{
    generate_sem, match_disturbances, run_causal, run_instance, write_edges_csv, CausalConfig,
    CausalOutcome, CausalRecord, SemInstance, SemSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    X1ToX2,
    X2ToX1,
    Inconclusive,
}

impl Direction {
    pub fn mirrored(self) -> Self {
        match self {
            Direction::X1ToX2 => Direction::X2ToX1,
            Direction::X2ToX1 => Direction::X1ToX2,
            Direction::Inconclusive => Direction::Inconclusive,
        }
    }

    pub fn edge(self) -> Option<(&'static str, &'static str)> {
        match self {
            Direction::X1ToX2 => Some(("x1", "x2")),
            Direction::X2ToX1 => Some(("x2", "x1")),
            Direction::Inconclusive => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsicOptions {
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    /// evenly strided subsample used for the tests
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_permutations() -> usize {
    500
}
fn default_level() -> f64 {
    0.05
}
fn default_samples() -> usize {
    1000
}

impl Default for HsicOptions {
    fn default() -> Self {
        Self { permutations: default_permutations(), level: default_level(), samples: default_samples() }
    }
}

/// p-values of the four tests `variable vs disturbance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourTests {
    pub x1_n1: HsicResult,
    pub x1_n2: HsicResult,
    pub x2_n1: HsicResult,
    pub x2_n2: HsicResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionVerdict {
    pub verdict: Direction,
    pub tests: FourTests,
    pub level: f64,
}

/// Decision from the four p-values.
///
/// `x1 -> x2` needs `x1` independent of `n2` (no rejection) while `x1`-`n1`,
/// `x2`-`n1` and `x2`-`n2` are all dependent; `x2 -> x1` is the mirror image.
pub fn decide_from_p(p_x1_n1: f64, p_x1_n2: f64, p_x2_n1: f64, p_x2_n2: f64, level: f64) -> Direction {
    let dep = |p: f64| p <= level;
    if !dep(p_x1_n2) && dep(p_x1_n1) && dep(p_x2_n1) && dep(p_x2_n2) {
        Direction::X1ToX2
    } else if !dep(p_x2_n1) && dep(p_x2_n2) && dep(p_x1_n2) && dep(p_x1_n1) {
        Direction::X2ToX1
    } else {
        Direction::Inconclusive
    }
}

/// Runs the four HSIC tests with one shared permutation list.
///
/// `n1` and `n2` are the disturbances matched to `x1` and `x2`.
pub fn decide_direction(
    x1: &[f64],
    x2: &[f64],
    n1: &[f64],
    n2: &[f64],
    options: &HsicOptions,
    seed: Seed,
) -> Result<DirectionVerdict> {
    let perms = permutation_list(x1.len(), options.permutations, seed);
    let tests = FourTests {
        x1_n1: hsic_test_with(x1, n1, &perms)?,
        x1_n2: hsic_test_with(x1, n2, &perms)?,
        x2_n1: hsic_test_with(x2, n1, &perms)?,
        x2_n2: hsic_test_with(x2, n2, &perms)?,
    };
    let verdict = decide_from_p(
        tests.x1_n1.p_value,
        tests.x1_n2.p_value,
        tests.x2_n1.p_value,
        tests.x2_n2.p_value,
        options.level,
    );
    Ok(DirectionVerdict { verdict, tests, level: options.level })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_rule_cases() {
        assert_eq!(decide_from_p(0.01, 0.4, 0.01, 0.01, 0.05), Direction::X1ToX2);
        assert_eq!(decide_from_p(0.01, 0.01, 0.4, 0.01, 0.05), Direction::X2ToX1);
        assert_eq!(decide_from_p(0.4, 0.4, 0.4, 0.4, 0.05), Direction::Inconclusive);
        assert_eq!(decide_from_p(0.01, 0.01, 0.01, 0.01, 0.05), Direction::Inconclusive);
        assert_eq!(decide_from_p(0.01, 0.4, 0.4, 0.01, 0.05), Direction::Inconclusive);
    }

    #[test]
    fn swapped_inputs_mirror_the_verdict() {
        let grid = [0.001, 0.03, 0.05, 0.2, 0.9];
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    for &d in &grid {
                        let v = decide_from_p(a, b, c, d, 0.05);
                        // swap variables and disturbances together
                        assert_eq!(decide_from_p(d, c, b, a, 0.05), v.mirrored());
                    }
                }
            }
        }
    }
}
