//! Gamma-cross-entropy objectives and their cross-entropy baselines.
//!
//! All sigmoid powers are evaluated in the log domain,
//! `sigma(t)^a = exp(a * log_sigmoid(t))`, and batch sums of such terms are
//! combined with log-sum-exp, so scores of magnitude several hundred stay
//! finite. `gamma = 0` never evaluates a `1/gamma` expression: it dispatches
//! to the exact cross entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    BinaryPair,
    Multiclass { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaLossSpec {
    pub gamma: f64,
    pub task: Task,
}

impl GammaLossSpec {
    pub fn new(gamma: f64, task: Task) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Parameter(format!("gamma must be a finite value >= 0, got {gamma}")));
        }
        if let Task::Multiclass { classes } = task {
            if classes < 2 {
                return Err(Error::Parameter("multiclass task needs at least two classes".into()));
            }
        }
        Ok(Self { gamma, task })
    }
}

/// Scores fed to a contrastive loss.
#[derive(Debug, Clone, PartialEq)]
pub enum ContrastiveBatch {
    /// `positive[t] = log r(x(t), u(t))`, `negative[t] = log r(x(t), u_p(t))`.
    Binary { positive: Vec<f64>, negative: Vec<f64> },
    /// `logits[(t, k)] = log r(k, x(t))`; labels are zero-based class indices.
    Multiclass { logits: Matrix, labels: Vec<usize> },
}

/// Loss value and its gradient with respect to every score in the batch.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreGradient {
    Binary { positive: Vec<f64>, negative: Vec<f64> },
    Multiclass(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: ScoreGradient,
}

/// `log(sigmoid(t))`, stable for any finite `t`.
#[inline]
pub fn log_sigmoid(t: f64) -> f64 {
    -softplus(-t)
}

/// `log(1 + exp(t))`.
#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().fold(0.0, |acc, v| acc + (v - m).exp()).ln()
}

fn check_binary<'a>(batch: &'a ContrastiveBatch) -> Result<(&'a [f64], &'a [f64])> {
    match batch {
        ContrastiveBatch::Binary { positive, negative } => {
            if positive.is_empty() {
                return Err(Error::Input("empty batch".into()));
            }
            if positive.len() != negative.len() {
                return Err(Error::Input(format!(
                    "unbalanced batch: {} positive vs {} negative scores",
                    positive.len(),
                    negative.len()
                )));
            }
            if positive.iter().chain(negative).any(|z| !z.is_finite()) {
                return Err(Error::Input("non-finite score".into()));
            }
            Ok((positive, negative))
        }
        ContrastiveBatch::Multiclass { .. } => {
            Err(Error::Input("binary loss needs a binary-pair batch".into()))
        }
    }
}

fn check_multiclass<'a>(batch: &'a ContrastiveBatch) -> Result<(&'a Matrix, &'a [usize])> {
    match batch {
        ContrastiveBatch::Multiclass { logits, labels } => {
            if labels.is_empty() {
                return Err(Error::Input("empty batch".into()));
            }
            if logits.rows() != labels.len() {
                return Err(Error::Input("one label per logit row required".into()));
            }
            if let Some(&bad) = labels.iter().find(|&&k| k >= logits.cols()) {
                return Err(Error::Input(format!(
                    "label {bad} out of range for {} classes",
                    logits.cols()
                )));
            }
            logits.ensure_finite("logits")?;
            Ok((logits, labels))
        }
        ContrastiveBatch::Binary { .. } => {
            Err(Error::Input("multiclass loss needs a logit matrix".into()))
        }
    }
}

/// Empirical binary gamma-cross entropy over `T` positive and `T` negative
/// pairs:
/// `-(1/g) log[(1/2T) sum_t (sigma((g+1)z+)^(g/(g+1)) + sigma(-(g+1)z-)^(g/(g+1)))]`.
pub fn gamma_binary_loss(batch: &ContrastiveBatch, spec: &GammaLossSpec) -> Result<LossOutput> {
    let gamma = validated_gamma(spec)?;
    let (pos, neg) = check_binary(batch)?;
    if gamma == 0.0 {
        return baseline_ce_loss(batch);
    }
    let k = gamma + 1.0;
    let c = gamma / k;
    let n = pos.len();
    let mut log_terms = Vec::with_capacity(2 * n);
    log_terms.extend(pos.iter().map(|&z| c * log_sigmoid(k * z)));
    log_terms.extend(neg.iter().map(|&z| c * log_sigmoid(-k * z)));
    let log_total = log_sum_exp(&log_terms);
    let loss = -(log_total - ((2 * n) as f64).ln()) / gamma;

    // d loss / d z+ = -(w_t) (1 - sigma(k z+)),  d loss / d z- = +(w_t) sigma(k z-)
    // with w_t = term_t / sum of terms
    let gpos = pos
        .iter()
        .zip(&log_terms[..n])
        .map(|(&z, &lt)| -(lt - log_total).exp() * sigmoid(-k * z))
        .collect();
    let gneg = neg
        .iter()
        .zip(&log_terms[n..])
        .map(|(&z, &lt)| (lt - log_total).exp() * sigmoid(k * z))
        .collect();
    Ok(LossOutput { loss, grad: ScoreGradient::Binary { positive: gpos, negative: gneg } })
}

/// Empirical multiclass gamma-cross entropy:
/// `-(1/g) log[(1/T) sum_t exp(g z[t,u_t] - (g/(g+1)) LSE_k((g+1) z[t,k]))]`.
pub fn gamma_multiclass_loss(batch: &ContrastiveBatch, spec: &GammaLossSpec) -> Result<LossOutput> {
    let gamma = validated_gamma(spec)?;
    let (logits, labels) = check_multiclass(batch)?;
    if let Task::Multiclass { classes } = spec.task {
        if classes != logits.cols() {
            return Err(Error::Input(format!(
                "spec declares {classes} classes, logits have {}",
                logits.cols()
            )));
        }
    }
    if gamma == 0.0 {
        return baseline_ce_loss(batch);
    }
    let k = gamma + 1.0;
    let c = gamma / k;
    let (t_len, classes) = logits.shape();
    let mut scaled = vec![0.0; classes];
    let mut probs = Matrix::zeros(t_len, classes);
    let mut per_sample = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let row = logits.row(t);
        for (s, &z) in scaled.iter_mut().zip(row) {
            *s = k * z;
        }
        let lse = log_sum_exp(&scaled);
        for (p, s) in probs.row_mut(t).iter_mut().zip(&scaled) {
            *p = (s - lse).exp();
        }
        per_sample.push(gamma * row[labels[t]] - c * lse);
    }
    let log_total = log_sum_exp(&per_sample);
    let loss = -(log_total - (t_len as f64).ln()) / gamma;

    // d loss / d z[t,k] = -w_t (delta_{k,u_t} - softmax_k((g+1) z[t,.]))
    let mut grad = Matrix::zeros(t_len, classes);
    for t in 0..t_len {
        let w = (per_sample[t] - log_total).exp();
        let p = probs.row(t);
        for (kk, g) in grad.row_mut(t).iter_mut().enumerate() {
            let indicator = if kk == labels[t] { 1.0 } else { 0.0 };
            *g = -w * (indicator - p[kk]);
        }
    }
    Ok(LossOutput { loss, grad: ScoreGradient::Multiclass(grad) })
}

/// Dispatch on the batch kind.
pub fn gamma_loss(batch: &ContrastiveBatch, spec: &GammaLossSpec) -> Result<LossOutput> {
    match batch {
        ContrastiveBatch::Binary { .. } => gamma_binary_loss(batch, spec),
        ContrastiveBatch::Multiclass { .. } => gamma_multiclass_loss(batch, spec),
    }
}

/// Exact logistic (balanced binary) or softmax cross entropy.
pub fn baseline_ce_loss(batch: &ContrastiveBatch) -> Result<LossOutput> {
    match batch {
        ContrastiveBatch::Binary { .. } => {
            let (pos, neg) = check_binary(batch)?;
            let m = (2 * pos.len()) as f64;
            let total = pos.iter().fold(0.0, |acc, &z| acc + softplus(-z))
                + neg.iter().fold(0.0, |acc, &z| acc + softplus(z));
            let gpos = pos.iter().map(|&z| -sigmoid(-z) / m).collect();
            let gneg = neg.iter().map(|&z| sigmoid(z) / m).collect();
            Ok(LossOutput {
                loss: total / m,
                grad: ScoreGradient::Binary { positive: gpos, negative: gneg },
            })
        }
        ContrastiveBatch::Multiclass { .. } => {
            let (logits, labels) = check_multiclass(batch)?;
            let (t_len, classes) = logits.shape();
            let n = t_len as f64;
            let mut total = 0.0;
            let mut grad = Matrix::zeros(t_len, classes);
            for t in 0..t_len {
                let row = logits.row(t);
                let lse = log_sum_exp(row);
                total += lse - row[labels[t]];
                for (kk, g) in grad.row_mut(t).iter_mut().enumerate() {
                    let indicator = if kk == labels[t] { 1.0 } else { 0.0 };
                    *g = ((row[kk] - lse).exp() - indicator) / n;
                }
            }
            Ok(LossOutput { loss: total / n, grad: ScoreGradient::Multiclass(grad) })
        }
    }
}

fn validated_gamma(spec: &GammaLossSpec) -> Result<f64> {
    if !(spec.gamma >= 0.0) || !spec.gamma.is_finite() {
        return Err(Error::Parameter(format!("gamma must be >= 0, got {}", spec.gamma)));
    }
    Ok(spec.gamma)
}

/// Monte-Carlo estimate of the outlier leakage term
/// `nu = eps * E_outlier[sigma((g+1) z)^(g/(g+1))]` from log-ratio scores on
/// outlier samples. Scores of `-inf` (a zero ratio) contribute zero.
pub fn estimate_nu(outlier_scores: &[f64], eps: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Parameter(
            "nu is only informative for gamma > 0 (it is the constant eps at gamma = 0)".into(),
        ));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Parameter(format!("contamination ratio {eps} outside [0, 1)")));
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    if outlier_scores.is_empty() {
        return Err(Error::Input("no outlier scores".into()));
    }
    if outlier_scores.iter().any(|z| z.is_nan() || *z == f64::INFINITY) {
        return Err(Error::Input("outlier scores must be finite or -inf".into()));
    }
    let k = gamma + 1.0;
    let c = gamma / k;
    let sum = outlier_scores.iter().fold(0.0, |acc, &z| {
        if z == f64::NEG_INFINITY {
            acc
        } else {
            acc + (c * log_sigmoid(k * z)).exp()
        }
    });
    Ok(eps * sum / outlier_scores.len() as f64)
}
