//! Training of the four contrastive pipelines (TCL, RTCL, PCL, RPCL).
//!
//! A minibatch objective is evaluated in two passes over fixed-size row
//! chunks. The forward pass computes features and scores per chunk, the loss
//! is taken on the whole minibatch (the gamma losses do not decompose over
//! samples), and the backward pass pushes the score gradients through each
//! chunk. Chunk results are reduced in chunk order, so parallel and
//! sequential builds produce identical parameters.

mod adam;
mod heads;

pub use adam::{adam_step, AdamState};
pub use heads::{Head, RpclHead, RtclHead};

use serde::{Deserialize, Serialize};

use crate::datagen::{make_pcl_pairs, Auxiliary, PclPairs};
use crate::error::{Error, Result};
use crate::losses::{baseline_ce_loss, gamma_loss, ContrastiveBatch, GammaLossSpec, ScoreGradient, Task};
use crate::numerics::{Activation, FeatureNetwork, GradientBundle, Matrix, Tape};
use crate::parallel::{chunk_ranges, map_indexed};
use crate::rng::{permutation, Seed, Stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tcl,
    Rtcl,
    Pcl,
    Rpcl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tcl => "tcl",
            Method::Rtcl => "rtcl",
            Method::Pcl => "pcl",
            Method::Rpcl => "rpcl",
        }
    }

    pub fn is_robust(self) -> bool {
        matches!(self, Method::Rtcl | Method::Rpcl)
    }

    /// Segment-label (time-contrastive) rather than pair (permutation) task.
    pub fn uses_segments(self) -> bool {
        matches!(self, Method::Tcl | Method::Rtcl)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Optimizer and architecture settings shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
    /// Baseline epochs run before a robust method starts; ignored by
    /// baselines.
    #[serde(default)]
    pub warm_start_epochs: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    /// hidden width = factor x input dimension
    #[serde(default = "default_hidden_factor")]
    pub hidden_factor: usize,
    #[serde(default = "default_true")]
    pub refresh_negatives: bool,
    #[serde(default)]
    pub cosine_decay: bool,
    /// rows per parallel work item
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    400
}
fn default_batch() -> usize {
    256
}
fn default_l2() -> f64 {
    1e-4
}
fn default_hidden_layers() -> usize {
    2
}
fn default_hidden_factor() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_chunk() -> usize {
    64
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            l2: default_l2(),
            warm_start_epochs: 0,
            hidden_layers: default_hidden_layers(),
            hidden_factor: default_hidden_factor(),
            refresh_negatives: true,
            cosine_decay: false,
            chunk_size: default_chunk(),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.chunk_size == 0 {
            return fail("batch_size and chunk_size must be >= 1".into());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return fail(format!("l2 must be >= 0, got {}", self.l2));
        }
        if self.hidden_factor == 0 {
            return fail("hidden_factor must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub options: TrainOptions,
}

impl TrainConfig {
    pub fn new(method: Method, gamma: f64) -> Self {
        Self { method, gamma, seed: 0, options: TrainOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.options.validate()?;
        if self.method.is_robust() {
            if !(self.gamma > 0.0 && self.gamma.is_finite()) {
                return Err(Error::Config(format!("{} needs gamma > 0, got {}", self.method, self.gamma)));
            }
        } else if self.gamma != 0.0 {
            return Err(Error::Config(format!(
                "{} is the gamma = 0 baseline, got gamma {}",
                self.method, self.gamma
            )));
        }
        Ok(())
    }
}

/// Feature extractor plus contrastive head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub network: FeatureNetwork,
    pub head: Head,
}

impl Model {
    /// Seeded initialization; TCL and RTCL (PCL and RPCL) runs with the same
    /// seed start from identical parameters.
    pub fn init(config: &TrainConfig, input_dim: usize, classes: Option<usize>) -> Result<Self> {
        let mut rng = Seed(config.seed).stream(Stream::Init);
        let width = config.options.hidden_factor * input_dim;
        let hidden = vec![width; config.options.hidden_layers];
        if config.method.uses_segments() {
            let k = classes.ok_or_else(|| Error::Config("segment methods need a class count".into()))?;
            let network =
                FeatureNetwork::maxout_mlp(input_dim, &hidden, input_dim, Activation::Abs, &mut rng)?;
            let head = Head::Segment(RtclHead::random(k, input_dim, &mut rng)?);
            Ok(Self { network, head })
        } else {
            let network =
                FeatureNetwork::maxout_mlp(input_dim, &hidden, input_dim, Activation::Identity, &mut rng)?;
            let head = Head::Pair(RpclHead::random(input_dim, &mut rng));
            Ok(Self { network, head })
        }
    }

    pub fn param_count(&self) -> usize {
        self.network.param_count() + self.head.param_count()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.network.flat_params();
        p.extend(self.head.flat_params());
        p
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "model has {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let n = self.network.param_count();
        self.network.set_flat_params(&flat[..n])?;
        self.head.set_flat_params(&flat[n..])
    }

    pub fn weight_mask(&self) -> Vec<bool> {
        let mut m = self.network.weight_mask();
        m.extend(self.head.weight_mask());
        m
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.network.predict(x)
    }

    /// `(l2 / 2) * sum of squared weights` (biases excluded).
    pub fn penalty(&self, l2: f64) -> f64 {
        let p = self.flat_params();
        0.5 * l2 * p.iter().zip(self.weight_mask()).filter(|(_, w)| *w).map(|(v, _)| v * v).sum::<f64>()
    }
}

/// Training examples referenced by minibatch indices.
#[derive(Debug, Clone)]
pub enum TrainData<'a> {
    /// Index `i` is sample `i` with its segment label.
    Segments { x: &'a Matrix, labels: &'a [usize], classes: usize },
    /// Index `i` is pair `i`: positive `(current, lagged)`, negative
    /// `(current, permuted_lagged)`.
    Pairs { x: &'a Matrix, pairs: PclPairs },
}

impl TrainData<'_> {
    pub fn len(&self) -> usize {
        match self {
            TrainData::Segments { labels, .. } => labels.len(),
            TrainData::Pairs { pairs, .. } => pairs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn loss_spec(gamma: f64, task: Task) -> Result<Option<GammaLossSpec>> {
    if gamma == 0.0 {
        Ok(None)
    } else {
        GammaLossSpec::new(gamma, task).map(Some)
    }
}

fn evaluate_loss(batch: &ContrastiveBatch, spec: Option<&GammaLossSpec>) -> Result<crate::losses::LossOutput> {
    match spec {
        Some(s) => gamma_loss(batch, s),
        None => baseline_ce_loss(batch),
    }
}

struct ChunkForward {
    features: Matrix,
    tape: Tape,
    scores: Vec<f64>,
}

/// Unpenalized data loss and its gradient in [`Model::flat_params`] order.
pub fn batch_objective(
    model: &Model,
    data: &TrainData,
    rows: &[usize],
    gamma: f64,
    chunk_size: usize,
) -> Result<(f64, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::Input("empty minibatch".into()));
    }
    let chunks = chunk_ranges(rows.len(), chunk_size);
    match data {
        TrainData::Segments { x, labels, classes } => {
            let Head::Segment(head) = &model.head else {
                return Err(Error::State("segment data needs a segment head".into()));
            };
            let forward: Vec<Result<ChunkForward>> = map_indexed(chunks.len(), |c| {
                let xb = x.select_rows(&rows[chunks[c].clone()]);
                let (features, tape) = model.network.forward(&xb)?;
                let logits = head.logits(&features)?;
                Ok(ChunkForward { features, tape, scores: logits.into_vec() })
            });
            let forward = forward.into_iter().collect::<Result<Vec<_>>>()?;
            let k = *classes;
            let logits = Matrix::new(
                rows.len(),
                k,
                forward.iter().flat_map(|f| f.scores.iter().copied()).collect(),
            )?;
            let labels: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            let spec = loss_spec(gamma, Task::Multiclass { classes: k })?;
            let out = evaluate_loss(&ContrastiveBatch::Multiclass { logits, labels }, spec.as_ref())?;
            let ScoreGradient::Multiclass(dlogits) = out.grad else {
                return Err(Error::State("multiclass loss returned binary gradient".into()));
            };
            let backward: Vec<Result<(GradientBundle, Vec<f64>)>> = map_indexed(chunks.len(), |c| {
                let r = &chunks[c];
                let dl = dlogits.slice_rows(r.start, r.end);
                let f = &forward[c];
                let (head_grad, dh) = head.backward(&f.features, &dl)?;
                Ok((model.network.backward(&f.tape, &dh)?, head_grad))
            });
            Ok((out.loss, reduce(backward)?))
        }
        TrainData::Pairs { x, pairs } => {
            let Head::Pair(head) = &model.head else {
                return Err(Error::State("pair data needs a pair head".into()));
            };
            // per chunk rows are stacked as [current; lagged; negative]
            let forward: Vec<Result<ChunkForward>> = map_indexed(chunks.len(), |c| {
                let idx = &rows[chunks[c].clone()];
                let n = idx.len();
                let mut all = Vec::with_capacity(3 * n);
                all.extend(idx.iter().map(|&i| pairs.current[i]));
                all.extend(idx.iter().map(|&i| pairs.lagged[i]));
                all.extend(idx.iter().map(|&i| pairs.permuted_lagged[i]));
                let (features, tape) = model.network.forward(&x.select_rows(&all))?;
                let mut scores = Vec::with_capacity(2 * n);
                for i in 0..n {
                    scores.push(head.score(features.row(i), features.row(n + i)));
                }
                for i in 0..n {
                    scores.push(head.score(features.row(i), features.row(2 * n + i)));
                }
                Ok(ChunkForward { features, tape, scores })
            });
            let forward = forward.into_iter().collect::<Result<Vec<_>>>()?;
            let mut positive = Vec::with_capacity(rows.len());
            let mut negative = Vec::with_capacity(rows.len());
            for f in &forward {
                let n = f.scores.len() / 2;
                positive.extend_from_slice(&f.scores[..n]);
                negative.extend_from_slice(&f.scores[n..]);
            }
            let spec = loss_spec(gamma, Task::BinaryPair)?;
            let out = evaluate_loss(&ContrastiveBatch::Binary { positive, negative }, spec.as_ref())?;
            let ScoreGradient::Binary { positive: gp, negative: gn } = out.grad else {
                return Err(Error::State("binary loss returned multiclass gradient".into()));
            };
            let backward: Vec<Result<(GradientBundle, Vec<f64>)>> = map_indexed(chunks.len(), |c| {
                let r = chunks[c].clone();
                let n = r.len();
                let f = &forward[c];
                let d = f.features.cols();
                let mut head_grad = vec![0.0; model.head.param_count()];
                let mut dh = Matrix::zeros(3 * n, d);
                let mut dhx = vec![0.0; d];
                let mut dhu = vec![0.0; d];
                for (i, t) in r.enumerate() {
                    for (upstream, other) in [(gp[t], n + i), (gn[t], 2 * n + i)] {
                        dhx.iter_mut().for_each(|v| *v = 0.0);
                        dhu.iter_mut().for_each(|v| *v = 0.0);
                        head.score_backward(
                            f.features.row(i),
                            f.features.row(other),
                            upstream,
                            &mut head_grad,
                            &mut dhx,
                            &mut dhu,
                        );
                        for (a, b) in dh.row_mut(i).iter_mut().zip(&dhx) {
                            *a += b;
                        }
                        for (a, b) in dh.row_mut(other).iter_mut().zip(&dhu) {
                            *a += b;
                        }
                    }
                }
                Ok((model.network.backward(&f.tape, &dh)?, head_grad))
            });
            Ok((out.loss, reduce(backward)?))
        }
    }
}

fn reduce(parts: Vec<Result<(GradientBundle, Vec<f64>)>>) -> Result<Vec<f64>> {
    let mut net_total: Option<GradientBundle> = None;
    let mut head_total: Vec<f64> = Vec::new();
    for part in parts {
        let (g, h) = part?;
        match net_total.as_mut() {
            None => {
                net_total = Some(g);
                head_total = h;
            }
            Some(acc) => {
                acc.add_params(&g);
                for (a, b) in head_total.iter_mut().zip(&h) {
                    *a += b;
                }
            }
        }
    }
    let mut flat = net_total.map(|g| g.flatten()).unwrap_or_default();
    flat.extend(head_total);
    Ok(flat)
}

/// Data loss plus `(l2/2)||w||^2`, with gradient.
pub fn penalized_objective(
    model: &Model,
    data: &TrainData,
    rows: &[usize],
    gamma: f64,
    l2: f64,
    chunk_size: usize,
) -> Result<(f64, Vec<f64>)> {
    let (loss, mut grad) = batch_objective(model, data, rows, gamma, chunk_size)?;
    if l2 == 0.0 {
        return Ok((loss, grad));
    }
    let params = model.flat_params();
    for ((g, p), w) in grad.iter_mut().zip(&params).zip(model.weight_mask()) {
        if w {
            *g += l2 * p;
        }
    }
    Ok((loss + model.penalty(l2), grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    WarmStart,
    Main,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::WarmStart => "warm-start",
            Phase::Main => "main",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    /// mean penalized minibatch loss
    pub loss: f64,
    /// mean Euclidean norm of the penalized minibatch gradient
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochRecord>,
    /// training classification accuracy of the final model
    pub accuracy: f64,
}

struct Streams {
    minibatch: StreamRng,
    negatives: StreamRng,
}

/// Train a time-contrastive method (TCL or RTCL) on segment-labelled data.
pub fn train_tcl_rtcl(
    x: &Matrix,
    labels: &[usize],
    classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if !config.method.uses_segments() {
        return Err(Error::Config(format!("{} is not a segment method", config.method)));
    }
    if labels.len() != x.rows() {
        return Err(Error::Shape("one segment label per sample required".into()));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::Input("segment label out of range".into()));
    }
    let model = Model::init(config, x.cols(), Some(classes))?;
    let data = TrainData::Segments { x, labels, classes };
    run(model, data, config)
}

/// Train a permutation-contrastive method (PCL or RPCL) on a time series.
pub fn train_pcl_rpcl(x: &Matrix, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.method.uses_segments() {
        return Err(Error::Config(format!("{} is not a pair method", config.method)));
    }
    let pairs = make_pcl_pairs(x, Seed(config.seed))?;
    let model = Model::init(config, x.cols(), None)?;
    run(model, TrainData::Pairs { x, pairs }, config)
}

/// Dispatch on the method, checking it against the auxiliary variable.
pub fn train(x: &Matrix, aux: &Auxiliary, config: &TrainConfig) -> Result<TrainOutcome> {
    match (aux, config.method.uses_segments()) {
        (Auxiliary::Segments { count, labels }, true) => train_tcl_rtcl(x, labels, *count, config),
        (Auxiliary::Lagged, false) => train_pcl_rpcl(x, config),
        (Auxiliary::Segments { .. }, false) => Err(Error::Config(format!(
            "{} needs a lagged time series, dataset is segmented",
            config.method
        ))),
        (Auxiliary::Lagged, true) => Err(Error::Config(format!(
            "{} needs segment labels, dataset is a lagged series",
            config.method
        ))),
    }
}

fn run(mut model: Model, mut data: TrainData, config: &TrainConfig) -> Result<TrainOutcome> {
    x_finite(&data)?;
    let seed = Seed(config.seed);
    let mut streams =
        Streams { minibatch: seed.stream(Stream::Minibatch), negatives: seed.stream(Stream::Permutation) };
    let mut trace = Vec::new();
    let mut first_epoch = true;
    if config.method.is_robust() && config.options.warm_start_epochs > 0 {
        optimize(
            &mut model,
            &mut data,
            0.0,
            config.options.warm_start_epochs,
            config,
            Phase::WarmStart,
            &mut streams,
            &mut first_epoch,
            &mut trace,
        )?;
    }
    let gamma = if config.method.is_robust() { config.gamma } else { 0.0 };
    optimize(&mut model, &mut data, gamma, config.options.epochs, config, Phase::Main, &mut streams, &mut first_epoch, &mut trace)?;
    let accuracy = training_accuracy(&model, &data, config.options.chunk_size)?;
    Ok(TrainOutcome { model, trace, accuracy })
}

fn x_finite(data: &TrainData) -> Result<()> {
    match data {
        TrainData::Segments { x, .. } | TrainData::Pairs { x, .. } => x.ensure_finite("training data"),
    }
}

#[allow(clippy::too_many_arguments)]
fn optimize(
    model: &mut Model,
    data: &mut TrainData,
    gamma: f64,
    epochs: usize,
    config: &TrainConfig,
    phase: Phase,
    streams: &mut Streams,
    first_epoch: &mut bool,
    trace: &mut Vec<EpochRecord>,
) -> Result<()> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Input("no training examples".into()));
    }
    // each phase starts from a fresh optimizer state
    let mut adam = AdamState::new(model.param_count());
    let batches_per_epoch = n.div_ceil(config.options.batch_size);
    let total_steps = (epochs * batches_per_epoch).max(1);
    let mut params = model.flat_params();
    for epoch in 0..epochs {
        if let TrainData::Pairs { pairs, .. } = data {
            if config.options.refresh_negatives && !*first_epoch {
                pairs.repermute(&mut streams.negatives);
            }
        }
        *first_epoch = false;
        let order = permutation(&mut streams.minibatch, n);
        let (mut loss_sum, mut norm_sum, mut count) = (0.0, 0.0, 0usize);
        for (b, rows) in order.chunks(config.options.batch_size).enumerate() {
            let (loss, grad) = penalized_objective(model, data, rows, gamma, config.options.l2, config.options.chunk_size)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss in {} phase, epoch {epoch}, batch {b}",
                    phase.name()
                )));
            }
            let step = epoch * batches_per_epoch + b;
            let lr = if config.options.cosine_decay {
                let frac = step as f64 / total_steps as f64;
                0.5 * config.options.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
            } else {
                config.options.learning_rate
            };
            adam_step(&mut adam, &mut params, &grad, lr).map_err(|e| {
                Error::Numerical(format!("{} phase, epoch {epoch}, batch {b}: {e}", phase.name()))
            })?;
            model.set_flat_params(&params)?;
            loss_sum += loss;
            norm_sum += grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            count += 1;
        }
        trace.push(EpochRecord {
            phase,
            epoch,
            loss: loss_sum / count as f64,
            grad_norm: norm_sum / count as f64,
        });
    }
    Ok(())
}

/// Segment classification accuracy, or for pairs the mean of the positive
/// and negative hit rates under the current negative permutation.
pub fn training_accuracy(model: &Model, data: &TrainData, chunk_size: usize) -> Result<f64> {
    let n = data.len();
    let chunks = chunk_ranges(n, chunk_size.max(256));
    let hits: Vec<Result<usize>> = map_indexed(chunks.len(), |c| {
        let r = chunks[c].clone();
        match (data, &model.head) {
            (TrainData::Segments { x, labels, .. }, Head::Segment(head)) => {
                let idx: Vec<usize> = r.collect();
                let logits = head.logits(&model.network.predict(&x.select_rows(&idx))?)?;
                Ok(idx
                    .iter()
                    .enumerate()
                    .filter(|(i, &t)| argmax(logits.row(*i)) == labels[t])
                    .count())
            }
            (TrainData::Pairs { x, pairs }, Head::Pair(head)) => {
                let mut count = 0;
                let idx: Vec<usize> = r.collect();
                let cur = model.network.predict(&x.select_rows(&idx.iter().map(|&i| pairs.current[i]).collect::<Vec<_>>()))?;
                let lag = model.network.predict(&x.select_rows(&idx.iter().map(|&i| pairs.lagged[i]).collect::<Vec<_>>()))?;
                let neg = model.network.predict(
                    &x.select_rows(&idx.iter().map(|&i| pairs.permuted_lagged[i]).collect::<Vec<_>>()),
                )?;
                for i in 0..idx.len() {
                    count += usize::from(head.score(cur.row(i), lag.row(i)) > 0.0);
                    count += usize::from(head.score(cur.row(i), neg.row(i)) <= 0.0);
                }
                Ok(count)
            }
            _ => Err(Error::State("head does not match training data".into())),
        }
    });
    let total: usize = hits.into_iter().sum::<Result<usize>>()?;
    let denom = match data {
        TrainData::Segments { .. } => n,
        TrainData::Pairs { .. } => 2 * n,
    };
    Ok(total as f64 / denom as f64)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
