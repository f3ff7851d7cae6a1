//! Central finite-difference gradient checking.

use super::network::{FeatureNetwork, GradientBundle};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over smooth coordinates of |analytic - numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates whose one-sided differences disagree: the loss has a kink
    /// there and the analytic value is a subgradient, so they are excluded.
    pub kinks: Vec<usize>,
    pub checked: usize,
}

/// Compare `analytic` against central differences of `loss` around `params`.
pub fn check_flat(
    params: &[f64],
    analytic: &[f64],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len(), "gradient length must match parameter length");
    let f0 = loss(params);
    let mut probe = params.to_vec();
    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst_index: None, kinks: Vec::new(), checked: 0 };
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let fp = loss(&probe);
        probe[i] = params[i] - step;
        let fm = loss(&probe);
        probe[i] = params[i];

        let central = (fp - fm) / (2.0 * step);
        let forward = (fp - f0) / step;
        let backward = (f0 - fm) / step;
        if (forward - backward).abs() > 1e-2 * central.abs().max(1.0) {
            report.kinks.push(i);
            continue;
        }
        report.checked += 1;
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}

/// Check the parameter gradients a closure reports for `net` against central
/// differences of the loss that closure computes.
pub fn gradient_check(
    net: &FeatureNetwork,
    loss: impl Fn(&FeatureNetwork) -> Result<(f64, GradientBundle)>,
) -> Result<GradCheckReport> {
    let (_, grads) = loss(net)?;
    let analytic = grads.flatten();
    let params = net.flat_params();
    let mut scratch = net.clone();
    let mut failure = None;
    let report = check_flat(&params, &analytic, DEFAULT_STEP, |p| {
        scratch.set_flat_params(p).expect("same layout");
        match loss(&scratch) {
            Ok((v, _)) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, Layer, Matrix};
    use crate::rng::{Seed, Stream};
    use rand::Rng;

    fn half_sum_squares(net: &FeatureNetwork, x: &Matrix) -> Result<(f64, GradientBundle)> {
        let (y, tape) = net.forward(x)?;
        let loss = 0.5 * y.as_slice().iter().map(|v| v * v).sum::<f64>();
        let grads = net.backward(&tape, &y)?;
        Ok((loss, grads))
    }

    #[test]
    fn quadratic_loss_on_linear_net() {
        let w = Matrix::new(2, 3, vec![0.2, -0.5, 1.0, 0.7, 0.1, -0.3]).unwrap();
        let net =
            FeatureNetwork::new(vec![Layer::new(w, vec![0.1, -0.2], Activation::Identity).unwrap()])
                .unwrap();
        let x = Matrix::from_fn(5, 3, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.2);
        let r = gradient_check(&net, |n| half_sum_squares(n, &x)).unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert!(r.kinks.is_empty());
    }

    #[test]
    fn random_three_layer_nets_match_finite_differences() {
        for (k, act) in [
            Activation::Abs,
            Activation::Identity,
            Activation::LeakyRelu { slope: 0.2 },
        ]
        .into_iter()
        .enumerate()
        {
            let seed = Seed(100 + k as u64);
            let mut rng = seed.stream(Stream::Init);
            let net = FeatureNetwork::maxout_mlp(3, &[8, 8], 3, act, &mut rng).unwrap();
            let mut drng = seed.stream(Stream::Sources);
            let x = Matrix::from_fn(6, 3, |_, _| drng.random_range(-2.0..2.0));
            let r = gradient_check(&net, |n| half_sum_squares(n, &x)).unwrap();
            assert!(r.max_rel_error < 1e-5, "{act:?}: {r:?}");
        }
    }

    #[test]
    fn kink_is_reported_not_failed() {
        // |w * x| with x = 0 is exactly at the abs kink in the bias direction
        let net = FeatureNetwork::new(vec![Layer::new(
            Matrix::new(1, 1, vec![1.0]).unwrap(),
            vec![0.0],
            Activation::Abs,
        )
        .unwrap()])
        .unwrap();
        let x = Matrix::new(1, 1, vec![0.0]).unwrap();
        let r = gradient_check(&net, |n| {
            let (y, tape) = n.forward(&x)?;
            let g = n.backward(&tape, &Matrix::new(1, 1, vec![1.0]).unwrap())?;
            Ok((y[(0, 0)], g))
        })
        .unwrap();
        assert_eq!(r.kinks, vec![1]);
    }
}
