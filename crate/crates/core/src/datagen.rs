//! Synthetic sources, outlier contamination, invertible nonlinear mixing and
//! contrastive pair construction.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::{condition_number, inverse};
use crate::numerics::{Activation, FeatureNetwork, Layer, Matrix};
use crate::rng::{laplace, permutation, Seed, Stream, StreamRng};

/// Lower end used in place of a zero Laplace scale.
pub const MIN_SCALE: f64 = 1e-3;
pub const AR_BURN_IN: usize = 1000;
pub const MIXING_SLOPE: f64 = 0.2;
pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentedSourceSpec {
    pub dim: usize,
    pub segments: usize,
    pub segment_length: usize,
    #[serde(default = "default_scale_range")]
    pub scale_range: (f64, f64),
}

fn default_scale_range() -> (f64, f64) {
    (MIN_SCALE, std::f64::consts::FRAC_1_SQRT_2)
}

impl SegmentedSourceSpec {
    pub fn new(dim: usize, segments: usize, segment_length: usize) -> Self {
        Self { dim, segments, segment_length, scale_range: default_scale_range() }
    }

    pub fn len(&self) -> usize {
        self.segments * self.segment_length
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("source dimension must be >= 1".into()));
        }
        if self.segments < 2 {
            return Err(Error::Config("need at least two segments".into()));
        }
        if self.segment_length < 1 {
            return Err(Error::Config("segment length must be >= 1".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!(
                "scale range [{lo}, {hi}] must lie inside (0, inf) with lo <= hi"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArSourceSpec {
    pub dim: usize,
    pub length: usize,
    pub rho: f64,
}

impl ArSourceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.length < 2 {
            return Err(Error::Config("AR sources need dim >= 1 and length >= 2".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!("|rho| must be < 1, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Outlier law used to replace contaminated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OutlierFamily {
    /// Independent zero-mean Laplace components.
    Laplace { scale: f64 },
    /// Per component, an equal-weight mixture of two Gaussians whose means are
    /// redrawn for every segment from the two ranges.
    ModulatedGaussMixture {
        #[serde(default = "default_upper")]
        upper_mean_range: (f64, f64),
        #[serde(default = "default_lower")]
        lower_mean_range: (f64, f64),
        #[serde(default = "default_sd")]
        sd: f64,
        #[serde(default = "default_weight")]
        upper_weight: f64,
    },
    /// Laplace replacement for time series without segment labels.
    ReplacementLaplace { scale: f64 },
}

fn default_upper() -> (f64, f64) {
    (1.0, 4.0)
}
fn default_lower() -> (f64, f64) {
    (-4.0, -1.0)
}
fn default_sd() -> f64 {
    0.5
}
fn default_weight() -> f64 {
    0.5
}

impl OutlierFamily {
    pub fn modulated_default() -> Self {
        OutlierFamily::ModulatedGaussMixture {
            upper_mean_range: default_upper(),
            lower_mean_range: default_lower(),
            sd: default_sd(),
            upper_weight: default_weight(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            OutlierFamily::Laplace { scale } | OutlierFamily::ReplacementLaplace { scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::Config(format!("outlier scale must be > 0, got {scale}")));
                }
            }
            OutlierFamily::ModulatedGaussMixture {
                upper_mean_range: (a, b),
                lower_mean_range: (c, d),
                sd,
                upper_weight,
            } => {
                if !(a <= b && c <= d && sd > 0.0 && (0.0..=1.0).contains(&upper_weight)) {
                    return Err(Error::Config("invalid modulated mixture parameters".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    pub eps: f64,
    pub family: OutlierFamily,
}

impl ContaminationSpec {
    pub fn none() -> Self {
        Self { eps: 0.0, family: OutlierFamily::Laplace { scale: 3.0 } }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::Config(format!("eps must be in [0, 1), got {}", self.eps)));
        }
        self.family.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingSpec {
    pub layers: usize,
    #[serde(default = "default_max_condition")]
    pub max_condition: f64,
}

fn default_max_condition() -> f64 {
    1e3
}

impl Default for MixingSpec {
    fn default() -> Self {
        Self { layers: 3, max_condition: default_max_condition() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSources {
    pub sources: Matrix,
    /// zero-based segment index per sample
    pub labels: Vec<usize>,
    /// `segments x dim` Laplace scales
    pub scales: Matrix,
}

/// Piecewise-stationary Laplace sources: within segment `k` component `j` is
/// iid Laplace(0, scale[k, j]) with scales drawn uniformly from the range.
pub fn gen_segmented_sources(spec: &SegmentedSourceSpec, seed: Seed) -> Result<SegmentedSources> {
    spec.validate()?;
    let (lo, hi) = spec.scale_range;
    let mut scale_rng = seed.stream(Stream::Scales);
    let scales = Matrix::from_fn(spec.segments, spec.dim, |_, _| {
        if hi > lo {
            scale_rng.random_range(lo..hi)
        } else {
            lo
        }
    });
    let mut rng = seed.stream(Stream::Sources);
    let t_len = spec.len();
    let mut sources = Matrix::zeros(t_len, spec.dim);
    let mut labels = Vec::with_capacity(t_len);
    for k in 0..spec.segments {
        for i in 0..spec.segment_length {
            let t = k * spec.segment_length + i;
            for j in 0..spec.dim {
                sources[(t, j)] = laplace(&mut rng, scales[(k, j)]);
            }
            labels.push(k);
        }
    }
    Ok(SegmentedSources { sources, labels, scales })
}

/// Componentwise AR(1) with unit Laplace innovations, started after a
/// burn-in from zero.
pub fn gen_ar_sources(spec: &ArSourceSpec, seed: Seed) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = seed.stream(Stream::Sources);
    let mut state = vec![0.0; spec.dim];
    for _ in 0..AR_BURN_IN {
        for s in state.iter_mut() {
            *s = spec.rho * *s + laplace(&mut rng, 1.0);
        }
    }
    let mut out = Matrix::zeros(spec.length, spec.dim);
    for t in 0..spec.length {
        for (j, s) in state.iter_mut().enumerate() {
            *s = spec.rho * *s + laplace(&mut rng, 1.0);
            out[(t, j)] = *s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contaminated {
    pub sources: Matrix,
    pub outlier_mask: Vec<bool>,
}

/// Replace each sample (row) independently with probability `eps` by a draw
/// from the outlier family.
pub fn contaminate(
    sources: &Matrix,
    labels: Option<&[usize]>,
    spec: &ContaminationSpec,
    seed: Seed,
) -> Result<Contaminated> {
    spec.validate()?;
    let (t_len, dim) = sources.shape();
    if let Some(l) = labels {
        if l.len() != t_len {
            return Err(Error::Shape("one label per source sample required".into()));
        }
    }
    let mut out = sources.clone();
    let mut mask = vec![false; t_len];
    if spec.eps == 0.0 {
        return Ok(Contaminated { sources: out, outlier_mask: mask });
    }
    let mut rng = seed.stream(Stream::Outliers);

    let segment_means = match &spec.family {
        OutlierFamily::ModulatedGaussMixture { upper_mean_range, lower_mean_range, .. } => {
            let labels = labels.ok_or_else(|| {
                Error::Config("modulated Gaussian outliers need segment labels".into())
            })?;
            let segments = labels.iter().copied().max().map_or(0, |m| m + 1);
            let mut draw = |(a, b): (f64, f64)| if b > a { rng.random_range(a..b) } else { a };
            let means: Vec<(f64, f64)> = (0..segments * dim)
                .map(|_| (draw(*upper_mean_range), draw(*lower_mean_range)))
                .collect();
            Some(means)
        }
        _ => None,
    };

    for t in 0..t_len {
        if rng.random::<f64>() >= spec.eps {
            continue;
        }
        mask[t] = true;
        for j in 0..dim {
            out[(t, j)] = match &spec.family {
                OutlierFamily::Laplace { scale } | OutlierFamily::ReplacementLaplace { scale } => {
                    laplace(&mut rng, *scale)
                }
                OutlierFamily::ModulatedGaussMixture { sd, upper_weight, .. } => {
                    let means = segment_means.as_ref().expect("drawn above");
                    let seg = labels.expect("checked above")[t];
                    let (up, down) = means[seg * dim + j];
                    let z: f64 = rng.sample(StandardNormal);
                    let m = if rng.random::<f64>() < *upper_weight { up } else { down };
                    m + sd * z
                }
            };
        }
    }
    Ok(Contaminated { sources: out, outlier_mask: mask })
}

/// Invertible random mixing: square affine layers with leaky-ReLU between
/// them and a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingNetwork {
    net: FeatureNetwork,
}

impl MixingNetwork {
    pub fn from_network(net: FeatureNetwork) -> Result<Self> {
        for l in net.layers() {
            if l.weight.rows() != l.weight.cols() {
                return Err(Error::Shape("mixing layers must be square".into()));
            }
            if !matches!(l.activation, Activation::LeakyRelu { .. } | Activation::Identity) {
                return Err(Error::Shape("mixing layers use leaky-ReLU or identity".into()));
            }
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &FeatureNetwork {
        &self.net
    }

    pub fn apply(&self, sources: &Matrix) -> Result<Matrix> {
        self.net.predict(sources)
    }

    /// Exact inverse map from observations back to sources.
    pub fn invert(&self, x: &Matrix) -> Result<Matrix> {
        let mut current = x.clone();
        for layer in self.net.layers().iter().rev() {
            if let Activation::LeakyRelu { slope } = layer.activation {
                current = current.map(|v| if v > 0.0 { v } else { v / slope });
            }
            let inv = inverse(&layer.weight)?;
            let mut next = Matrix::zeros(current.rows(), current.cols());
            for s in 0..current.rows() {
                let centered: Vec<f64> =
                    current.row(s).iter().zip(&layer.bias).map(|(v, b)| v - b).collect();
                for (o, out) in next.row_mut(s).iter_mut().enumerate() {
                    *out = crate::numerics::dot(inv.row(o), &centered);
                }
            }
            current = next;
        }
        Ok(current)
    }
}

/// Draw a random invertible mixing network and apply it.
pub fn mix_nonlinear(sources: &Matrix, spec: &MixingSpec, seed: Seed) -> Result<(Matrix, MixingNetwork)> {
    if spec.layers < 1 {
        return Err(Error::Config("mixing needs at least one layer".into()));
    }
    let dim = sources.cols();
    let mut rng = seed.stream(Stream::Mixing);
    let mut layers = Vec::with_capacity(spec.layers);
    for k in 0..spec.layers {
        let weight = draw_conditioned(&mut rng, dim, spec.max_condition)?;
        let activation = if k + 1 < spec.layers {
            Activation::LeakyRelu { slope: MIXING_SLOPE }
        } else {
            Activation::Identity
        };
        layers.push(Layer::new(weight, vec![0.0; dim], activation)?);
    }
    let mixing = MixingNetwork::from_network(FeatureNetwork::new(layers)?)?;
    let x = mixing.apply(sources)?;
    Ok((x, mixing))
}

fn draw_conditioned(rng: &mut StreamRng, dim: usize, max_condition: f64) -> Result<Matrix> {
    let scale = 1.0 / (dim as f64).sqrt();
    for _ in 0..MAX_RESAMPLES {
        let w = Matrix::from_fn(dim, dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        if condition_number(&w) <= max_condition {
            return Ok(w);
        }
    }
    Err(Error::Generation(format!(
        "no mixing weight with condition number <= {max_condition} after {MAX_RESAMPLES} draws"
    )))
}

/// Index pairs for permutation-contrastive learning.
#[derive(Debug, Clone, PartialEq)]
pub struct PclPairs {
    /// positions t = 1..T-1
    pub current: Vec<usize>,
    /// t - 1 for each entry of `current`
    pub lagged: Vec<usize>,
    /// a uniformly permuted copy of `lagged`
    pub permuted_lagged: Vec<usize>,
}

impl PclPairs {
    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    /// Draw a fresh permutation for the negative pairs.
    pub fn repermute<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let p = permutation(rng, self.lagged.len());
        self.permuted_lagged = p.iter().map(|&i| self.lagged[i]).collect();
    }
}

/// Positive pairs `(x(t), x(t-1))` and permuted negatives `(x(t), x(pi(t)-1))`.
pub fn make_pcl_pairs(x: &Matrix, seed: Seed) -> Result<PclPairs> {
    let t_len = x.rows();
    if t_len < 2 {
        return Err(Error::Input("need at least two time points".into()));
    }
    let current: Vec<usize> = (1..t_len).collect();
    let lagged: Vec<usize> = (0..t_len - 1).collect();
    let mut pairs = PclPairs { current, lagged, permuted_lagged: Vec::new() };
    pairs.repermute(&mut seed.stream(Stream::Permutation));
    Ok(pairs)
}

/// Auxiliary variable attached to a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Auxiliary {
    Segments { count: usize, labels: Vec<usize> },
    /// `u(t) = x(t-1)`
    Lagged,
}

/// A generated dataset together with everything needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub x: Matrix,
    pub aux: Auxiliary,
    pub sources_clean: Matrix,
    pub sources: Matrix,
    pub outlier_mask: Vec<bool>,
    pub mixing: MixingNetwork,
    pub provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    format: String,
    version: u32,
    header: DatasetHeader,
    data: LabeledSeries,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    samples: usize,
    dim: usize,
    outliers: usize,
}

const DATASET_FORMAT: &str = "robica-dataset";

impl LabeledSeries {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn segment_labels(&self) -> Option<(&[usize], usize)> {
        match &self.aux {
            Auxiliary::Segments { count, labels } => Some((labels, *count)),
            Auxiliary::Lagged => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DatasetDoc {
            format: DATASET_FORMAT.into(),
            version: 1,
            header: DatasetHeader {
                samples: self.len(),
                dim: self.dim(),
                outliers: self.outlier_mask.iter().filter(|&&m| m).count(),
            },
            data: self.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DatasetDoc = serde_json::from_str(text)?;
        if doc.format != DATASET_FORMAT {
            return Err(Error::Input(format!("not a dataset document: {}", doc.format)));
        }
        let d = doc.data;
        if d.outlier_mask.len() != d.x.rows() || d.sources.rows() != d.x.rows() {
            return Err(Error::Shape("dataset arrays disagree in length".into()));
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Segmented sources, contaminated and mixed.
pub fn generate_segmented_series(
    spec: &SegmentedSourceSpec,
    contamination: &ContaminationSpec,
    mixing: &MixingSpec,
    seed: Seed,
) -> Result<LabeledSeries> {
    let gen = gen_segmented_sources(spec, seed)?;
    let cont = contaminate(&gen.sources, Some(&gen.labels), contamination, seed)?;
    let (x, net) = mix_nonlinear(&cont.sources, mixing, seed)?;
    Ok(LabeledSeries {
        x,
        aux: Auxiliary::Segments { count: spec.segments, labels: gen.labels },
        sources_clean: gen.sources,
        sources: cont.sources,
        outlier_mask: cont.outlier_mask,
        mixing: net,
        provenance: serde_json::json!({
            "generator": "segmented",
            "spec": spec,
            "contamination": contamination,
            "mixing": mixing,
            "seed": seed.0,
        }),
    })
}

/// AR(1) sources, contaminated and mixed.
pub fn generate_ar_series(
    spec: &ArSourceSpec,
    contamination: &ContaminationSpec,
    mixing: &MixingSpec,
    seed: Seed,
) -> Result<LabeledSeries> {
    let clean = gen_ar_sources(spec, seed)?;
    let cont = contaminate(&clean, None, contamination, seed)?;
    let (x, net) = mix_nonlinear(&cont.sources, mixing, seed)?;
    Ok(LabeledSeries {
        x,
        aux: Auxiliary::Lagged,
        sources_clean: clean,
        sources: cont.sources,
        outlier_mask: cont.outlier_mask,
        mixing: net,
        provenance: serde_json::json!({
            "generator": "ar",
            "spec": spec,
            "contamination": contamination,
            "mixing": mixing,
            "seed": seed.0,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::pearson;

    #[test]
    fn paper_scale_sizes() {
        let spec = SegmentedSourceSpec::new(10, 256, 512);
        assert_eq!(spec.len(), 512 * 256);
        spec.validate().unwrap();
    }

    #[test]
    fn segment_length_one_gives_ramp() {
        let g = gen_segmented_sources(&SegmentedSourceSpec::new(2, 5, 1), Seed(1)).unwrap();
        assert_eq!(g.labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn labels_are_contiguous_blocks() {
        let g = gen_segmented_sources(&SegmentedSourceSpec::new(1, 4, 3), Seed(1)).unwrap();
        assert_eq!(g.labels, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
    }

    #[test]
    fn degenerate_scale_range_gives_that_mad() {
        let c = 0.4;
        let mut spec = SegmentedSourceSpec::new(2, 8, 4000);
        spec.scale_range = (c, c);
        let g = gen_segmented_sources(&spec, Seed(9)).unwrap();
        for k in 0..8 {
            for j in 0..2 {
                let vals: Vec<f64> =
                    (0..4000).map(|i| g.sources[(k * 4000 + i, j)].abs()).collect();
                let mad = crate::numerics::mean(&vals);
                // Laplace |s| has mean c and sd c
                let se = c / (4000f64).sqrt();
                assert!((mad - c).abs() < 4.5 * se, "segment {k}: {mad}");
            }
        }
    }

    #[test]
    fn ar_iid_case_has_no_autocorrelation() {
        let t = 20_000;
        let s = gen_ar_sources(&ArSourceSpec { dim: 1, length: t, rho: 0.0 }, Seed(4)).unwrap();
        let col = s.column(0);
        let r = pearson(&col[1..], &col[..t - 1]).unwrap();
        assert!(r.abs() < 3.0 / (t as f64).sqrt(), "{r}");
    }

    #[test]
    fn ar_autocorrelation_matches_rho() {
        let t = 65_536;
        let s = gen_ar_sources(&ArSourceSpec { dim: 2, length: t, rho: 0.7 }, Seed(4)).unwrap();
        for j in 0..2 {
            let col = s.column(j);
            let r = pearson(&col[1..], &col[..t - 1]).unwrap();
            assert!((r - 0.7).abs() < 0.01, "{r}");
        }
    }

    #[test]
    fn zero_eps_leaves_sources_untouched() {
        let s = gen_ar_sources(&ArSourceSpec { dim: 2, length: 100, rho: 0.5 }, Seed(2)).unwrap();
        let c = contaminate(&s, None, &ContaminationSpec::none(), Seed(2)).unwrap();
        assert_eq!(c.sources, s);
        assert!(c.outlier_mask.iter().all(|&m| !m));
    }

    #[test]
    fn contamination_fraction_converges() {
        let t = 100_000;
        let s = Matrix::zeros(t, 1);
        let spec = ContaminationSpec { eps: 0.1, family: OutlierFamily::ReplacementLaplace { scale: 3.0 } };
        let c = contaminate(&s, None, &spec, Seed(8)).unwrap();
        let frac = c.outlier_mask.iter().filter(|&&m| m).count() as f64 / t as f64;
        assert!((frac - 0.1).abs() < 0.003, "{frac}");
        // replaced rows carry outlier draws, others stay clean
        for (t, &m) in c.outlier_mask.iter().enumerate() {
            assert_eq!(m, c.sources[(t, 0)] != 0.0);
        }
    }

    #[test]
    fn modulated_mixture_needs_labels_and_uses_ranges() {
        let s = Matrix::zeros(2000, 2);
        let spec = ContaminationSpec { eps: 0.5, family: OutlierFamily::modulated_default() };
        assert!(matches!(contaminate(&s, None, &spec, Seed(1)), Err(Error::Config(_))));
        let labels: Vec<usize> = (0..2000).map(|t| t / 1000).collect();
        let c = contaminate(&s, Some(&labels), &spec, Seed(1)).unwrap();
        let replaced: Vec<f64> = (0..2000)
            .filter(|&t| c.outlier_mask[t])
            .map(|t| c.sources[(t, 0)])
            .collect();
        assert!(replaced.iter().all(|v| v.abs() < 4.0 + 6.0 * 0.5));
        let pos = replaced.iter().filter(|&&v| v > 0.0).count() as f64 / replaced.len() as f64;
        assert!((pos - 0.5).abs() < 0.1);
    }

    #[test]
    fn unknown_family_tag_is_rejected() {
        let bad = r#"{"eps": 0.1, "family": {"kind": "cauchy", "scale": 1.0}}"#;
        assert!(serde_json::from_str::<ContaminationSpec>(bad).is_err());
    }

    #[test]
    fn identity_mixing_is_leaky_chain() {
        let layer = |act| Layer::new(Matrix::identity(2), vec![0.0; 2], act).unwrap();
        let lr = Activation::LeakyRelu { slope: MIXING_SLOPE };
        let net = FeatureNetwork::new(vec![layer(lr), layer(lr), layer(Activation::Identity)]).unwrap();
        let m = MixingNetwork::from_network(net).unwrap();
        let s = Matrix::new(2, 2, vec![1.0, -1.0, -2.0, 0.5]).unwrap();
        let x = m.apply(&s).unwrap();
        let expect = Matrix::new(2, 2, vec![1.0, -0.04, -0.08, 0.5]).unwrap();
        assert!(x.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn mixing_inverts_exactly() {
        let g = gen_segmented_sources(&SegmentedSourceSpec::new(10, 4, 100), Seed(3)).unwrap();
        let (x, mix) = mix_nonlinear(&g.sources, &MixingSpec::default(), Seed(3)).unwrap();
        assert_eq!(mix.network().layers().len(), 3);
        assert!(mix.network().layers().iter().all(|l| l.weight.shape() == (10, 10)));
        let back = mix.invert(&x).unwrap();
        assert!(back.max_abs_diff(&g.sources) < 1e-8);
    }

    #[test]
    fn pcl_pairs() {
        let x = Matrix::zeros(3, 1);
        let p = make_pcl_pairs(&x, Seed(0)).unwrap();
        assert_eq!(p.len(), 2);
        let mut perm = p.permuted_lagged.clone();
        perm.sort_unstable();
        assert_eq!(perm, p.lagged);
        assert!(make_pcl_pairs(&Matrix::zeros(1, 1), Seed(0)).is_err());
    }

    #[test]
    fn shuffled_negatives_lose_lag_dependence() {
        let t = 10_000;
        let s = gen_ar_sources(&ArSourceSpec { dim: 3, length: t, rho: 0.7 }, Seed(6)).unwrap();
        let p = make_pcl_pairs(&s, Seed(6)).unwrap();
        let mut total = 0.0;
        for j in 0..3 {
            let now: Vec<f64> = p.current.iter().map(|&i| s[(i, j)]).collect();
            let neg: Vec<f64> = p.permuted_lagged.iter().map(|&i| s[(i, j)]).collect();
            total += pearson(&now, &neg).unwrap().abs();
        }
        assert!(total / 3.0 < 0.02, "{}", total / 3.0);
    }

    #[test]
    fn generation_is_reproducible_and_round_trips() {
        let spec = SegmentedSourceSpec::new(3, 4, 50);
        let cont = ContaminationSpec { eps: 0.1, family: OutlierFamily::Laplace { scale: 3.0 } };
        let a = generate_segmented_series(&spec, &cont, &MixingSpec::default(), Seed(21)).unwrap();
        let b = generate_segmented_series(&spec, &cont, &MixingSpec::default(), Seed(21)).unwrap();
        assert_eq!(a, b);
        let text = a.to_json().unwrap();
        let back = LabeledSeries::from_json(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn contamination_does_not_shift_clean_draws() {
        let spec = SegmentedSourceSpec::new(2, 3, 40);
        let clean = generate_segmented_series(&spec, &ContaminationSpec::none(), &MixingSpec::default(), Seed(5)).unwrap();
        let cont = ContaminationSpec { eps: 0.3, family: OutlierFamily::Laplace { scale: 3.0 } };
        let dirty = generate_segmented_series(&spec, &cont, &MixingSpec::default(), Seed(5)).unwrap();
        assert_eq!(clean.sources_clean, dirty.sources_clean);
        assert_eq!(clean.mixing, dirty.mixing);
    }
}
