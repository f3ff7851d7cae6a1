//! The verification suite: every oracle check as one CSV row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::*;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOptions {
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_nu_gammas")]
    pub nu_gammas: Vec<f64>,
    #[serde(default = "default_magnitudes")]
    pub if_magnitudes: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_gammas() -> Vec<f64> {
    vec![0.5, 1.0]
}
fn default_eps() -> Vec<f64> {
    vec![0.1, 0.3, 0.5]
}
fn default_nu_gammas() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 2.0]
}
fn default_magnitudes() -> Vec<f64> {
    vec![2.0, 5.0, 10.0, 50.0, 100.0]
}
fn default_tolerance() -> f64 {
    1e-3
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            gammas: default_gammas(),
            eps: default_eps(),
            nu_gammas: default_nu_gammas(),
            if_magnitudes: default_magnitudes(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub instance: String,
    pub quantity: String,
    pub expected: f64,
    pub got: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn within(instance: String, quantity: &str, expected: f64, got: f64, tolerance: f64) -> Self {
        let pass = (got - expected).abs() <= tolerance;
        Self { instance, quantity: quantity.into(), expected, got, tolerance, pass }
    }

    /// `got <= bound`; the bound is reported as the expected value.
    fn at_most(instance: String, quantity: &str, bound: f64, got: f64) -> Self {
        Self { instance, quantity: quantity.into(), expected: bound, got, tolerance: 0.0, pass: got <= bound }
    }

    fn holds(instance: String, quantity: &str, ok: bool) -> Self {
        Self {
            instance,
            quantity: quantity.into(),
            expected: 1.0,
            got: if ok { 1.0 } else { 0.0 },
            tolerance: 0.0,
            pass: ok,
        }
    }
}

type Job<'a> = Box<dyn Fn() -> Result<Vec<Check>> + Send + Sync + 'a>;

fn minimizer_checks(name: String, d: &DiscreteJointDensity, gamma: f64, tol: f64) -> Result<Vec<Check>> {
    let r = brute_force_minimizer(d, gamma)?;
    Ok(vec![
        Check::within(name.clone(), "max relative deviation from r*", 0.0, r.max_rel_dev, tol),
        Check::holds(name.clone(), "J(r*) <= J(r* (1 +- 0.1))", r.locally_minimal),
        Check::holds(name, "grid scan optimum next to r*", r.globally_minimal),
    ])
}

/// Runs the full oracle suite. Instances run in parallel; row order is fixed.
pub fn run_verification(options: &VerifyOptions) -> Result<Vec<Check>> {
    let tol = options.tolerance;
    let mut jobs: Vec<Job> = Vec::new();
    for &gamma in &options.gammas {
        jobs.push(Box::new(move || {
            minimizer_checks(format!("hand-2x2 g={gamma}"), &hand_two_by_two(), gamma, tol)
        }));
        jobs.push(Box::new(move || {
            minimizer_checks(format!("independent g={gamma}"), &independent_instance(), gamma, tol)
        }));
        for &eps in &options.eps {
            jobs.push(Box::new(move || {
                let mut out = Vec::new();
                for (name, d) in separated_suite(eps) {
                    out.extend(minimizer_checks(format!("{name} eps={eps} g={gamma}"), &d, gamma, tol)?);
                }
                Ok(out)
            }));
            jobs.push(Box::new(move || {
                let r = brute_force_minimizer_multiclass(&multiclass_separated(eps), gamma)?;
                Ok(vec![Check::within(
                    format!("multiclass-separated eps={eps} g={gamma}"),
                    "max normalized deviation from p*(x|u)",
                    0.0,
                    r.max_abs_dev,
                    tol,
                )])
            }));
        }
    }
    jobs.push(Box::new(|| {
        let mut out = Vec::new();
        for &eps in &options.eps {
            for (name, d) in separated_suite(eps) {
                let nu = nu_sweep(&d, &options.nu_gammas, RatioChoice::Optimal)?;
                let worst = nu.iter().map(|p| p.nu).fold(0.0, f64::max);
                out.push(Check::within(format!("{name} eps={eps}"), "nu at r*", 0.0, worst, 0.0));
            }
        }
        let d = tail_overlap(0.2);
        let nu = nu_sweep(&d, &options.nu_gammas, RatioChoice::Optimal)?;
        let decreasing = nu.windows(2).all(|w| w[1].nu < w[0].nu);
        out.push(Check::holds("tail-overlap eps=0.2".into(), "nu strictly decreasing in gamma", decreasing));
        let mut clean = d;
        clean.eps = vec![0.0; clean.nu()];
        let nu = nu_sweep(&clean, &options.nu_gammas, RatioChoice::Optimal)?;
        let worst = nu.iter().map(|p| p.nu).fold(0.0, f64::max);
        out.push(Check::within("tail-overlap eps=0".into(), "nu without outliers", 0.0, worst, 0.0));
        Ok(out)
    }));
    jobs.push(Box::new(|| {
        let s = influence_sweep(1.0, &options.if_magnitudes, 1.0)?;
        let ok = s.bounded_after(10.0, 1.05)?;
        let tail = s.abs_if.iter().zip(&s.magnitudes).filter(|(_, &m)| m > 10.0).map(|(v, _)| *v);
        let worst = tail.fold(0.0, f64::max);
        let base = s.abs_if[s.magnitudes.iter().position(|&m| m == 10.0).unwrap_or(0)];
        Ok(vec![
            Check::at_most("if-probe g=1".into(), "tail max |IF| vs 1.05 |IF(10)|", 1.05 * base, worst),
            Check::holds("if-probe g=1".into(), "|IF| bounded along the tail", ok),
        ])
    }));
    jobs.push(Box::new(|| {
        let s = influence_sweep(0.0, &options.if_magnitudes, 1.0)?;
        Ok(vec![Check::holds("if-probe g=0".into(), "|IF| strictly increasing along the tail", s.increasing_after(10.0)?)])
    }));
    jobs.push(Box::new(|| {
        let mut m = IfProbeModel::gaussian(1.0, 0.5, 64, (0.5, 1.0));
        m.eps_grid = vec![1e-2, 1e-3];
        let r = numeric_influence_function(&m)?;
        let (a, b) = (r.finite_differences[0], r.finite_differences[1]);
        Ok(vec![Check::within("if-probe mode g=1".into(), "relative change eps 1e-2 vs 1e-3", 0.0, (a - b).abs() / b.abs(), 0.1)])
    }));
    let results = crate::parallel::map_indexed(jobs.len(), |i| jobs[i]());
    let mut checks = Vec::new();
    for r in results {
        checks.extend(r?);
    }
    Ok(checks)
}

pub fn write_checks_csv(checks: &[Check], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in checks {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}
