//! Synthetic structural equation data and the end-to-end direction pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{decide_direction, Direction, DirectionVerdict, HsicOptions, MIN_SAMPLES};
use crate::datagen::{contaminate, ContaminationSpec, OutlierFamily};
use crate::error::{Error, Result};
use crate::eval::{abs_corr_matrix, hungarian_max, matched_mean_abs_corr};
use crate::experiment::{EvalOptions, MethodSpec, VERSION};
use crate::numerics::Matrix;
use crate::postprocess::fastica;
use crate::preprocess::{apply_whitening, fit_whitening, WhiteningMethod};
use crate::rng::{laplace, Seed, Stream};
use crate::train::{train_tcl_rtcl, Method, TrainConfig, TrainOptions};

/// `x1 = n1`, `x2 = coefficient * x1^3 + n2` with Laplace disturbances whose
/// scales change between segments.
///
/// Segments enumerate every pair of scale levels once, so the two scale
/// sequences are exactly independent across segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemSpec {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_scale_range")]
    pub scale_range: (f64, f64),
    #[serde(default = "default_segment_length")]
    pub segment_length: usize,
    #[serde(default = "default_coefficient")]
    pub coefficient: f64,
}

fn default_levels() -> usize {
    6
}
fn default_scale_range() -> (f64, f64) {
    (0.1, 0.5)
}
fn default_segment_length() -> usize {
    512
}
fn default_coefficient() -> f64 {
    0.5
}

impl Default for SemSpec {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            scale_range: default_scale_range(),
            segment_length: default_segment_length(),
            coefficient: default_coefficient(),
        }
    }
}

impl SemSpec {
    pub fn segments(&self) -> usize {
        self.levels * self.levels
    }

    pub fn len(&self) -> usize {
        self.segments() * self.segment_length
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if self.levels < 2 {
            return Err(Error::Parameter("need at least two scale levels".into()));
        }
        if self.segment_length < 2 {
            return Err(Error::Parameter("segment length must be at least 2".into()));
        }
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Parameter(format!("scale range ({lo}, {hi}) must satisfy 0 < lo < hi")));
        }
        if !self.coefficient.is_finite() {
            return Err(Error::Parameter("coefficient must be finite".into()));
        }
        Ok(())
    }

    fn level_values(&self) -> Vec<f64> {
        let (lo, hi) = self.scale_range;
        (0..self.levels).map(|i| lo * (hi / lo).powf(i as f64 / (self.levels - 1) as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemInstance {
    /// observed variables in presentation order
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// `(n1, n2)` of the generating equations, after contamination
    pub disturbances: Matrix,
    pub outlier_mask: Vec<bool>,
    pub truth: Direction,
}

/// With `swapped`, the effect is presented as the first column.
pub fn generate_sem(spec: &SemSpec, contamination: &ContaminationSpec, seed: Seed, swapped: bool) -> Result<SemInstance> {
    spec.validate()?;
    contamination.validate()?;
    let levels = spec.level_values();
    let mut pairs: Vec<(usize, usize)> =
        (0..spec.levels).flat_map(|a| (0..spec.levels).map(move |b| (a, b))).collect();
    pairs.shuffle(&mut seed.stream(Stream::Scales));
    let mut rng = seed.stream(Stream::Sources);
    let t_len = spec.len();
    let mut n = Matrix::zeros(t_len, 2);
    let mut labels = Vec::with_capacity(t_len);
    for (k, &(a, b)) in pairs.iter().enumerate() {
        for i in 0..spec.segment_length {
            let t = k * spec.segment_length + i;
            n[(t, 0)] = laplace(&mut rng, levels[a]);
            n[(t, 1)] = laplace(&mut rng, levels[b]);
            labels.push(k);
        }
    }
    let contaminated = contaminate(&n, Some(&labels), contamination, seed)?;
    let n = contaminated.sources;
    let x = Matrix::from_fn(t_len, 2, |t, j| {
        let x1 = n[(t, 0)];
        let x2 = spec.coefficient * x1.powi(3) + n[(t, 1)];
        match (j, swapped) {
            (0, false) | (1, true) => x1,
            _ => x2,
        }
    });
    let truth = if swapped { Direction::X2ToX1 } else { Direction::X1ToX2 };
    Ok(SemInstance {
        x,
        labels,
        classes: spec.segments(),
        disturbances: n,
        outlier_mask: contaminated.outlier_mask,
        truth,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

/// Assign components to observed variables by maximal total
/// `|corr(component, |x_j - median(x_j)|)|`.
///
/// Returns `assignment[j]` = component for variable `j`, and the score matrix
/// (variables x components).
pub fn match_disturbances(components: &Matrix, x: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    if components.shape() != x.shape() {
        return Err(Error::Shape("components and observations differ in shape".into()));
    }
    let spread = Matrix::from_columns(
        &x.columns()
            .into_iter()
            .map(|c| {
                let m = median(&c);
                c.into_iter().map(|v| (v - m).abs()).collect()
            })
            .collect::<Vec<Vec<f64>>>(),
    )?;
    let score = abs_corr_matrix(&spread, components)?;
    Ok((hungarian_max(&score)?, score))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub sem: SemSpec,
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "default_outliers")]
    pub outliers: OutlierFamily,
    #[serde(default = "WhiteningMethod::robust_default")]
    pub whitening: WhiteningMethod,
    #[serde(default = "default_method")]
    pub method: MethodSpec,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub evaluation: EvalOptions,
    #[serde(default)]
    pub hsic: HsicOptions,
    /// present odd seeds with the effect first
    #[serde(default = "default_true")]
    pub alternate_order: bool,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_outliers() -> OutlierFamily {
    OutlierFamily::Laplace { scale: 3.0 }
}
fn default_method() -> MethodSpec {
    MethodSpec { method: Method::Rtcl, gamma: 1.0 }
}
fn default_true() -> bool {
    true
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl CausalConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("field `{path}`: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("field `{name}`: {e}"));
        if self.seeds.is_empty() {
            return Err(Error::Config("field `seeds`: at least one seed required".into()));
        }
        self.sem.validate().map_err(|e| field("sem", e))?;
        self.contamination().validate().map_err(|e| field("eps", e))?;
        if !self.method.method.uses_segments() {
            return Err(Error::Config(format!(
                "field `method.method`: {} needs lagged data; the pipeline uses segments",
                self.method.method
            )));
        }
        self.train_config(0).validate().map_err(|e| field("method", e))?;
        let h = &self.hsic;
        if h.permutations == 0 {
            return Err(Error::Config("field `hsic.permutations`: must be positive".into()));
        }
        if !(h.level > 0.0 && h.level < 1.0) {
            return Err(Error::Config("field `hsic.level`: must lie in (0, 1)".into()));
        }
        if h.samples < MIN_SAMPLES || h.samples > self.sem.len() {
            return Err(Error::Config(format!(
                "field `hsic.samples`: must lie in [{MIN_SAMPLES}, {}]",
                self.sem.len()
            )));
        }
        Ok(())
    }

    pub fn contamination(&self) -> ContaminationSpec {
        ContaminationSpec { eps: self.eps, family: self.outliers.clone() }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { method: self.method.method, gamma: self.method.gamma, seed, options: self.train.clone() }
    }

    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.output = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.join(format!("causal-{}", self.hash()))
    }

    fn swapped(&self, seed: u64) -> bool {
        self.alternate_order && seed % 2 == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalRecord {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub truth: Direction,
    pub verdict: Option<DirectionVerdict>,
    /// component index per observed variable
    pub assignment: Option<Vec<usize>>,
    /// matched mean |corr| of the components with `|n|`
    pub recovery: Option<f64>,
    pub train_accuracy: Option<f64>,
}

impl CausalRecord {
    pub fn direction(&self) -> Direction {
        self.verdict.as_ref().map_or(Direction::Inconclusive, |v| v.verdict)
    }
}

/// Generate, whiten, train, unmix, match, and test one seed.
pub fn run_instance(config: &CausalConfig, seed: u64) -> CausalRecord {
    let swapped = config.swapped(seed);
    let truth = if swapped { Direction::X2ToX1 } else { Direction::X1ToX2 };
    let mut record = CausalRecord {
        toolkit_version: VERSION.into(),
        config_hash: config.hash(),
        seed,
        status: "ok".into(),
        error: None,
        truth,
        verdict: None,
        assignment: None,
        recovery: None,
        train_accuracy: None,
    };
    let attempt = || -> Result<(DirectionVerdict, Vec<usize>, f64, f64)> {
        let inst = generate_sem(&config.sem, &config.contamination(), Seed(seed), swapped)?;
        let white = fit_whitening(&inst.x, config.whitening)?;
        let xw = apply_whitening(&white, &inst.x)?;
        let outcome = train_tcl_rtcl(&xw, &inst.labels, inst.classes, &config.train_config(seed))?;
        let features = outcome.model.features(&xw)?;
        let ica = fastica(&features, config.evaluation.fastica, Seed(seed))?;
        let recovery = matched_mean_abs_corr(&ica.components, &inst.disturbances.map(f64::abs))?.mean;
        let (assignment, _) = match_disturbances(&ica.components, &inst.x)?;
        let stride = inst.x.rows() / config.hsic.samples;
        let idx: Vec<usize> = (0..config.hsic.samples).map(|i| i * stride).collect();
        let pick = |m: &Matrix, col: usize| idx.iter().map(|&t| m[(t, col)]).collect::<Vec<f64>>();
        let verdict = decide_direction(
            &pick(&inst.x, 0),
            &pick(&inst.x, 1),
            &pick(&ica.components, assignment[0]),
            &pick(&ica.components, assignment[1]),
            &config.hsic,
            Seed(seed),
        )?;
        Ok((verdict, assignment, recovery, outcome.accuracy))
    };
    match attempt() {
        Ok((verdict, assignment, recovery, accuracy)) => {
            record.verdict = Some(verdict);
            record.assignment = Some(assignment);
            record.recovery = Some(recovery);
            record.train_accuracy = Some(accuracy);
        }
        Err(e) => {
            log::error!("causal seed {seed}: {e}");
            record.status = "failed".into();
            record.error = Some(e.to_string());
        }
    }
    record
}

#[derive(Debug, Clone)]
pub struct CausalOutcome {
    pub run_dir: PathBuf,
    pub records: Vec<CausalRecord>,
}

impl CausalOutcome {
    pub fn correct(&self) -> usize {
        self.records.iter().filter(|r| r.direction() == r.truth).count()
    }

    pub fn reversed(&self) -> usize {
        self.records.iter().filter(|r| r.direction() == r.truth.mirrored() && r.truth != Direction::Inconclusive).count()
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.status != "ok").count()
    }
}

/// Run every seed, writing `<seed>/causal.json` and `edges.csv`.
pub fn run_causal(config: &CausalConfig) -> Result<CausalOutcome> {
    config.validate()?;
    let run_dir = config.run_dir();
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    let records = crate::parallel::map_indexed(config.seeds.len(), |i| run_instance(config, config.seeds[i]));
    for r in &records {
        let dir = run_dir.join(r.seed.to_string());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("causal.json"), serde_json::to_string_pretty(r)?)?;
    }
    write_edges_csv(&run_dir.join("edges.csv"), &records)?;
    Ok(CausalOutcome { run_dir, records })
}

#[derive(Serialize)]
struct EdgeRow<'a> {
    config_hash: &'a str,
    toolkit_version: &'a str,
    seed: u64,
    truth: Direction,
    verdict: Direction,
    from: &'a str,
    to: &'a str,
    p_x1_n1: Option<f64>,
    p_x1_n2: Option<f64>,
    p_x2_n1: Option<f64>,
    p_x2_n2: Option<f64>,
    level: Option<f64>,
}

pub fn write_edges_csv(path: &Path, records: &[CausalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        let v = r.verdict.as_ref();
        let (from, to) = r.direction().edge().unwrap_or(("", ""));
        w.serialize(EdgeRow {
            config_hash: &r.config_hash,
            toolkit_version: &r.toolkit_version,
            seed: r.seed,
            truth: r.truth,
            verdict: r.direction(),
            from,
            to,
            p_x1_n1: v.map(|v| v.tests.x1_n1.p_value),
            p_x1_n2: v.map(|v| v.tests.x1_n2.p_value),
            p_x2_n1: v.map(|v| v.tests.x2_n1.p_value),
            p_x2_n2: v.map(|v| v.tests.x2_n2.p_value),
            level: v.map(|v| v.level),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_design_is_balanced() {
        let spec = SemSpec { segment_length: 4, ..SemSpec::default() };
        let inst = generate_sem(&spec, &ContaminationSpec::none(), Seed(1), false).unwrap();
        assert_eq!(inst.x.rows(), 36 * 4);
        assert_eq!(inst.classes, 36);
        assert_eq!(inst.truth, Direction::X1ToX2);
        for t in 0..inst.x.rows() {
            let n1 = inst.disturbances[(t, 0)];
            assert_eq!(inst.x[(t, 0)], n1);
            assert!((inst.x[(t, 1)] - 0.5 * n1.powi(3) - inst.disturbances[(t, 1)]).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_presents_effect_first() {
        let spec = SemSpec { segment_length: 4, ..SemSpec::default() };
        let a = generate_sem(&spec, &ContaminationSpec::none(), Seed(2), false).unwrap();
        let b = generate_sem(&spec, &ContaminationSpec::none(), Seed(2), true).unwrap();
        assert_eq!(a.x.column(0), b.x.column(1));
        assert_eq!(b.truth, Direction::X2ToX1);
    }

    #[test]
    fn matching_pairs_components_with_variables() {
        let spec = SemSpec { segment_length: 64, ..SemSpec::default() };
        let inst = generate_sem(&spec, &ContaminationSpec::none(), Seed(3), false).unwrap();
        let abs_n = inst.disturbances.map(f64::abs);
        let flipped = abs_n.select_columns(&[1, 0]);
        let (assignment, _) = match_disturbances(&flipped, &inst.x).unwrap();
        assert_eq!(assignment, vec![1, 0]);
    }

    #[test]
    fn config_errors_name_fields() {
        let e = CausalConfig::from_json(r#"{"seeds": [0], "method": {"method": "pcl"}}"#).unwrap_err();
        assert!(e.to_string().contains("method.method"), "{e}");
        let e = CausalConfig::from_json(r#"{"seeds": [0], "hsic": {"samples": 10}}"#).unwrap_err();
        assert!(e.to_string().contains("hsic.samples"), "{e}");
        let e = CausalConfig::from_json(r#"{"seeds": [0], "bogus": 1}"#).unwrap_err();
        assert!(e.is_config());
    }
}
