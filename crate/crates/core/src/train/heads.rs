//! Contrastive heads mapping features to classifier scores.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Per-segment logits `w_u . h(x) + b_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtclHead {
    /// `K x d`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl RtclHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(Error::Shape("segment head needs at least two classes".into()));
        }
        if bias.len() != weights.rows() {
            return Err(Error::Shape("one bias per class required".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn random<R: Rng + ?Sized>(classes: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let a = (6.0 / (classes + dim) as f64).sqrt();
        let weights = Matrix::from_fn(classes, dim, |_, _| rng.random_range(-a..a));
        Self::new(weights, vec![0.0; classes])
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    /// `features W^T + b`
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        let mut out = features.matmul_t(&self.weights)?;
        for t in 0..out.rows() {
            for (v, b) in out.row_mut(t).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Head gradient (flat) and feature gradient for upstream `d logits`.
    pub fn backward(&self, features: &Matrix, dlogits: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let (k, d) = self.weights.shape();
        let mut grad = vec![0.0; k * d + k];
        for t in 0..features.rows() {
            let h = features.row(t);
            for (c, &g) in dlogits.row(t).iter().enumerate() {
                for (j, hv) in h.iter().enumerate() {
                    grad[c * d + j] += g * hv;
                }
                grad[k * d + c] += g;
            }
        }
        let dh = dlogits.matmul(&self.weights)?;
        Ok((grad, dh))
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = self.weights.as_slice().to_vec();
        out.extend_from_slice(&self.bias);
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let n = self.weights.as_slice().len();
        self.weights.as_mut_slice().copy_from_slice(&flat[..n]);
        self.bias.copy_from_slice(&flat[n..]);
    }
}

/// `z = sum_i -|a1_i h_i(x) + a2_i h_i(u) + b_i| - (abar_i h_i(x) + bbar_i)^2 + c`.
///
/// The absolute term enters with a negative sign so the head can express
/// a Laplace transition log-density `-|s(t) - rho s(t-1)|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpclHead {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub b: Vec<f64>,
    pub abar: Vec<f64>,
    pub bbar: Vec<f64>,
    pub c: f64,
}

impl RpclHead {
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let a1 = draw(dim);
        let a2 = draw(dim);
        let abar = draw(dim);
        Self { a1, a2, b: vec![0.0; dim], abar, bbar: vec![0.0; dim], c: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.a1.len()
    }

    pub fn score(&self, hx: &[f64], hu: &[f64]) -> f64 {
        let mut z = self.c;
        for i in 0..self.dim() {
            let q = self.a1[i] * hx[i] + self.a2[i] * hu[i] + self.b[i];
            let m = self.abar[i] * hx[i] + self.bbar[i];
            z += -q.abs() - m * m;
        }
        z
    }

    /// Accumulate `upstream * d score` into the flat head gradient and the
    /// two feature-row gradients.
    pub fn score_backward(
        &self,
        hx: &[f64],
        hu: &[f64],
        upstream: f64,
        head: &mut [f64],
        dhx: &mut [f64],
        dhu: &mut [f64],
    ) {
        let d = self.dim();
        let g = upstream;
        for i in 0..d {
            let q = self.a1[i] * hx[i] + self.a2[i] * hu[i] + self.b[i];
            // derivative of -|q|, subgradient 0 at the kink
            let s = if q > 0.0 {
                -1.0
            } else if q < 0.0 {
                1.0
            } else {
                0.0
            };
            let m = self.abar[i] * hx[i] + self.bbar[i];
            head[i] += g * s * hx[i];
            head[d + i] += g * s * hu[i];
            head[2 * d + i] += g * s;
            head[3 * d + i] -= g * 2.0 * m * hx[i];
            head[4 * d + i] -= g * 2.0 * m;
            dhx[i] += g * (s * self.a1[i] - 2.0 * m * self.abar[i]);
            dhu[i] += g * s * self.a2[i];
        }
        head[5 * d] += g;
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(5 * self.dim() + 1);
        for v in [&self.a1, &self.a2, &self.b, &self.abar, &self.bbar] {
            out.extend_from_slice(v);
        }
        out.push(self.c);
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let d = self.dim();
        for (k, v) in [&mut self.a1, &mut self.a2, &mut self.b, &mut self.abar, &mut self.bbar]
            .into_iter()
            .enumerate()
        {
            v.copy_from_slice(&flat[k * d..(k + 1) * d]);
        }
        self.c = flat[5 * d];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    Segment(RtclHead),
    Pair(RpclHead),
}

impl Head {
    pub fn param_count(&self) -> usize {
        match self {
            Head::Segment(h) => h.weights.as_slice().len() + h.bias.len(),
            Head::Pair(h) => 5 * h.dim() + 1,
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            Head::Segment(h) => h.flat(),
            Head::Pair(h) => h.flat(),
        }
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "head has {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        match self {
            Head::Segment(h) => h.set_flat(flat),
            Head::Pair(h) => h.set_flat(flat),
        }
        Ok(())
    }

    /// `true` where the l2 penalty applies.
    pub fn weight_mask(&self) -> Vec<bool> {
        match self {
            Head::Segment(h) => {
                let mut m = vec![true; h.weights.as_slice().len()];
                m.extend(vec![false; h.bias.len()]);
                m
            }
            Head::Pair(h) => {
                let d = h.dim();
                let mut m = Vec::with_capacity(5 * d + 1);
                for weight in [true, true, false, true, false] {
                    m.extend(std::iter::repeat(weight).take(d));
                }
                m.push(false);
                m
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_flat;

    #[test]
    fn pair_score_hand_value() {
        let head = RpclHead {
            a1: vec![1.0, 2.0],
            a2: vec![-1.0, 0.5],
            b: vec![0.0, 1.0],
            abar: vec![0.5, 0.0],
            bbar: vec![0.0, 1.0],
            c: 0.25,
        };
        // -|1 - 2| - 0.25 - |4 + 0.5 + 1| - 1 + 0.25
        let z = head.score(&[1.0, 2.0], &[2.0, 1.0]);
        assert!((z - (-1.0 - 0.25 - 5.5 - 1.0 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn pair_score_gradient_matches_differences() {
        let mut rng = crate::rng::Seed(3).stream(crate::rng::Stream::Init);
        let head = RpclHead::random(3, &mut rng);
        let hx = [0.3, -0.7, 1.1];
        let hu = [-0.2, 0.9, 0.4];
        let (mut gh, mut gx, mut gu) = (vec![0.0; 16], vec![0.0; 3], vec![0.0; 3]);
        head.score_backward(&hx, &hu, 1.0, &mut gh, &mut gx, &mut gu);
        let mut probe = Head::Pair(head.clone());
        let params = probe.flat_params();
        let r = check_flat(&params, &gh, 1e-6, |p| {
            probe.set_flat_params(p).unwrap();
            match &probe {
                Head::Pair(h) => h.score(&hx, &hu),
                Head::Segment(_) => unreachable!(),
            }
        });
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        let mut all = hx.to_vec();
        all.extend_from_slice(&hu);
        let mut analytic = gx;
        analytic.extend_from_slice(&gu);
        let r = check_flat(&all, &analytic, 1e-6, |v| head.score(&v[..3], &v[3..]));
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn masks_cover_params() {
        let mut rng = crate::rng::Seed(1).stream(crate::rng::Stream::Init);
        let seg = Head::Segment(RtclHead::random(4, 3, &mut rng).unwrap());
        assert_eq!(seg.weight_mask().len(), seg.param_count());
        assert_eq!(seg.weight_mask().iter().filter(|&&w| w).count(), 12);
        let pair = Head::Pair(RpclHead::random(3, &mut rng));
        assert_eq!(pair.weight_mask().len(), 16);
        assert_eq!(pair.weight_mask().iter().filter(|&&w| w).count(), 9);
    }

    #[test]
    fn head_needs_two_classes() {
        assert!(RtclHead::new(Matrix::zeros(1, 2), vec![0.0]).is_err());
    }
}
