//! Feed-forward feature extractor with exact reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Pointwise (or pairwise, for maxout) nonlinearity applied after an affine map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    /// Max over two affine groups; the weight matrix stacks group one on top
    /// of group two, so it has twice as many rows as the layer has outputs.
    Maxout2,
    Abs,
    Identity,
    LeakyRelu { slope: f64 },
}

impl Activation {
    fn groups(self) -> usize {
        match self {
            Activation::Maxout2 => 2,
            _ => 1,
        }
    }

    fn final_only(self) -> bool {
        matches!(self, Activation::Abs | Activation::Identity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for {} affine outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if weight.rows() % activation.groups() != 0 {
            return Err(Error::Shape("maxout layer needs an even number of affine rows".into()));
        }
        Ok(Self { weight, bias, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows() / self.activation.groups()
    }

    fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct FeatureNetwork {
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer>,
}

impl TryFrom<NetworkDoc> for FeatureNetwork {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        let net = FeatureNetwork::new(doc.layers)?;
        if net.input_dim() != doc.input_dim || net.output_dim() != doc.output_dim {
            return Err(Error::Shape("declared network dims disagree with its layers".into()));
        }
        Ok(net)
    }
}

impl From<FeatureNetwork> for NetworkDoc {
    fn from(net: FeatureNetwork) -> Self {
        NetworkDoc { input_dim: net.input_dim(), output_dim: net.output_dim(), layers: net.layers }
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    fingerprint: u64,
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients in the same layout as [`FeatureNetwork`], plus the
/// gradient with respect to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
    pub input: Matrix,
}

impl GradientBundle {
    /// Flattened in the order of [`FeatureNetwork::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weight.as_slice());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    /// Accumulate parameter gradients of another chunk; input gradients are
    /// not merged since they belong to different rows.
    pub fn add_params(&mut self, other: &GradientBundle) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

impl FeatureNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let last = layers.len() - 1;
        if let Some(k) = layers[..last].iter().position(|l| l.activation.final_only()) {
            return Err(Error::Shape(format!(
                "layer {k}: abs and identity activations are only allowed on the final layer"
            )));
        }
        Ok(Self { layers })
    }

    /// Maxout MLP: `hidden.len()` maxout-2 layers followed by a final affine
    /// layer with `final_activation`. Weights are Glorot-uniform, biases zero.
    pub fn maxout_mlp<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        final_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden {
            layers.push(glorot_layer(fan_in, width, Activation::Maxout2, rng)?);
            fan_in = width;
        }
        layers.push(glorot_layer(fan_in, output_dim, final_activation, rng)?);
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for a network with {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// `true` for weight entries, `false` for biases, in flat order.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(std::iter::repeat(true).take(l.weight.as_slice().len()));
            out.extend(std::iter::repeat(false).take(l.bias.len()));
        }
        out
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over parameter bits and layer shapes
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for l in &self.layers {
            eat(l.weight.rows() as u64);
            eat(l.weight.cols() as u64);
            for v in l.weight.as_slice().iter().chain(&l.bias) {
                eat(v.to_bits());
            }
        }
        h
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Tape)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        batch.ensure_finite("network input")?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &self.layers {
            let z = affine(layer, &current);
            let out = activate(layer.activation, &z, layer.out_dim());
            inputs.push(current);
            pre_activations.push(z);
            current = out;
        }
        Ok((current, Tape { fingerprint: self.fingerprint(), inputs, pre_activations }))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        batch.ensure_finite("network input")?;
        let mut current = batch.clone();
        for layer in &self.layers {
            let z = affine(layer, &current);
            current = activate(layer.activation, &z, layer.out_dim());
        }
        Ok(current)
    }

    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<GradientBundle> {
        if tape.fingerprint != self.fingerprint() || tape.inputs.len() != self.layers.len() {
            return Err(Error::State("tape was recorded on different parameters".into()));
        }
        if upstream.shape() != (tape.batch_size(), self.output_dim()) {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, expected {:?}",
                upstream.shape(),
                (tape.batch_size(), self.output_dim())
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[k];
            let z = &tape.pre_activations[k];
            let dz = activation_backward(layer.activation, z, &delta, layer.out_dim());
            let mut dw = Matrix::zeros(layer.weight.rows(), layer.weight.cols());
            let mut db = vec![0.0; layer.bias.len()];
            let mut dx = Matrix::zeros(x.rows(), x.cols());
            for s in 0..x.rows() {
                let xs = x.row(s);
                let dzs = dz.row(s);
                let dxs = dx.row_mut(s);
                for (o, &g) in dzs.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    for (w, xv) in dw.row_mut(o).iter_mut().zip(xs) {
                        *w += g * xv;
                    }
                    for (d, wv) in dxs.iter_mut().zip(layer.weight.row(o)) {
                        *d += g * wv;
                    }
                }
            }
            grads.push(LayerGrad { weight: dw, bias: db });
            delta = dx;
        }
        grads.reverse();
        Ok(GradientBundle { layers: grads, input: delta })
    }
}

fn glorot_layer<R: Rng + ?Sized>(
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    rng: &mut R,
) -> Result<Layer> {
    let rows = fan_out * activation.groups();
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let weight = Matrix::from_fn(rows, fan_in, |_, _| rng.random_range(-a..=a));
    Layer::new(weight, vec![0.0; rows], activation)
}

fn affine(layer: &Layer, x: &Matrix) -> Matrix {
    let rows = layer.weight.rows();
    let mut z = Matrix::zeros(x.rows(), rows);
    for s in 0..x.rows() {
        let xs = x.row(s);
        let zs = z.row_mut(s);
        for (o, zo) in zs.iter_mut().enumerate() {
            *zo = dot(layer.weight.row(o), xs) + layer.bias[o];
        }
    }
    z
}

fn activate(act: Activation, z: &Matrix, width: usize) -> Matrix {
    match act {
        Activation::Maxout2 => Matrix::from_fn(z.rows(), width, |s, j| {
            let (a, b) = (z[(s, j)], z[(s, width + j)]);
            if a >= b {
                a
            } else {
                b
            }
        }),
        Activation::Abs => z.map(f64::abs),
        Activation::Identity => z.clone(),
        Activation::LeakyRelu { slope } => z.map(|v| if v > 0.0 { v } else { slope * v }),
    }
}

fn activation_backward(act: Activation, z: &Matrix, delta: &Matrix, width: usize) -> Matrix {
    match act {
        Activation::Maxout2 => {
            let mut dz = Matrix::zeros(z.rows(), 2 * width);
            for s in 0..z.rows() {
                for j in 0..width {
                    // ties go to the first group
                    let k = if z[(s, j)] >= z[(s, width + j)] { j } else { width + j };
                    dz[(s, k)] = delta[(s, j)];
                }
            }
            dz
        }
        Activation::Abs => Matrix::from_fn(z.rows(), z.cols(), |s, j| {
            let v = z[(s, j)];
            let sign = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            sign * delta[(s, j)]
        }),
        Activation::Identity => delta.clone(),
        Activation::LeakyRelu { slope } => Matrix::from_fn(z.rows(), z.cols(), |s, j| {
            if z[(s, j)] > 0.0 {
                delta[(s, j)]
            } else {
                slope * delta[(s, j)]
            }
        }),
    }
}
