//! Declarative experiment runs: generate, whiten, train, postprocess,
//! evaluate, and write per-seed reports plus aggregate tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{
    generate_ar_series, generate_segmented_series, ArSourceSpec, ContaminationSpec,
    LabeledSeries, MixingSpec, OutlierFamily, SegmentedSourceSpec,
};
use crate::error::{Error, Result};
use crate::eval::{linear_identifiability_r2, matched_mean_abs_corr, MatchReport, R2Report};
use crate::numerics::Matrix;
use crate::postprocess::{fastica, FastIcaOptions};
use crate::preprocess::{apply_whitening, fit_whitening, WhiteningMethod, WhiteningTransform};
use crate::rng::Seed;
use crate::train::{train, EpochRecord, Method, Model, TrainConfig, TrainOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    Segmented {
        dim: usize,
        segments: usize,
        segment_length: usize,
        #[serde(default = "default_scale_range")]
        scale_range: (f64, f64),
        #[serde(default = "default_layers")]
        mixing_layers: usize,
        #[serde(default = "default_max_condition")]
        max_condition: f64,
    },
    Ar {
        dim: usize,
        length: usize,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_layers")]
        mixing_layers: usize,
        #[serde(default = "default_max_condition")]
        max_condition: f64,
    },
}

fn default_scale_range() -> (f64, f64) {
    SegmentedSourceSpec::new(1, 2, 1).scale_range
}
fn default_layers() -> usize {
    3
}
fn default_max_condition() -> f64 {
    MixingSpec::default().max_condition
}
fn default_rho() -> f64 {
    0.7
}

impl DataSpec {
    pub fn dim(&self) -> usize {
        match *self {
            DataSpec::Segmented { dim, .. } | DataSpec::Ar { dim, .. } => dim,
        }
    }

    fn mixing(&self) -> MixingSpec {
        match *self {
            DataSpec::Segmented { mixing_layers, max_condition, .. }
            | DataSpec::Ar { mixing_layers, max_condition, .. } => {
                MixingSpec { layers: mixing_layers, max_condition }
            }
        }
    }

    /// Generate the dataset for one contamination level.
    pub fn generate(&self, contamination: &ContaminationSpec, seed: Seed) -> Result<LabeledSeries> {
        match *self {
            DataSpec::Segmented { dim, segments, segment_length, scale_range, .. } => {
                let spec = SegmentedSourceSpec { dim, segments, segment_length, scale_range };
                generate_segmented_series(&spec, contamination, &self.mixing(), seed)
            }
            DataSpec::Ar { dim, length, rho, .. } => {
                generate_ar_series(&ArSourceSpec { dim, length, rho }, contamination, &self.mixing(), seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub gamma: f64,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        if self.method.is_robust() {
            format!("{}(g={})", self.method, self.gamma)
        } else {
            self.method.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    #[serde(default)]
    pub fastica: FastIcaOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { fastica: FastIcaOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub data: DataSpec,
    /// contamination ratios; one dataset per value
    pub eps: Vec<f64>,
    #[serde(default = "default_outliers")]
    pub outliers: OutlierFamily,
    #[serde(default = "WhiteningMethod::robust_default")]
    pub whitening: WhiteningMethod,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub evaluation: EvalOptions,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// write the generated datasets next to the reports
    #[serde(default)]
    pub save_datasets: bool,
}

fn default_outliers() -> OutlierFamily {
    OutlierFamily::Laplace { scale: 3.0 }
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Parse and validate; errors name the offending field.
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
        if self.seeds.is_empty() {
            return Err(Error::Config("field `seeds`: at least one seed required".into()));
        }
        if self.eps.is_empty() {
            return Err(Error::Config("field `eps`: at least one contamination ratio required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("field `methods`: at least one method required".into()));
        }
        for &eps in &self.eps {
            ContaminationSpec { eps, family: self.outliers.clone() }
                .validate()
                .map_err(|e| Error::Config(format!("field `eps`: {e}")))?;
        }
        match &self.data {
            DataSpec::Segmented { dim, segments, segment_length, scale_range, .. } => {
                SegmentedSourceSpec {
                    dim: *dim,
                    segments: *segments,
                    segment_length: *segment_length,
                    scale_range: *scale_range,
                }
                .validate()
                .map_err(|e| Error::Config(format!("field `data`: {e}")))?;
            }
            DataSpec::Ar { dim, length, rho, .. } => {
                ArSourceSpec { dim: *dim, length: *length, rho: *rho }
                    .validate()
                    .map_err(|e| Error::Config(format!("field `data`: {e}")))?;
            }
        }
        let segmented = matches!(self.data, DataSpec::Segmented { .. });
        for (i, m) in self.methods.iter().enumerate() {
            if m.method.uses_segments() != segmented {
                return Err(Error::Config(format!(
                    "field `methods[{i}].method`: {} does not match the {} data",
                    m.method,
                    if segmented { "segmented" } else { "ar" }
                )));
            }
            self.train_config(m, 0)
                .validate()
                .map_err(|e| Error::Config(format!("field `methods[{i}]`: {e}")))?;
        }
        Ok(())
    }

    pub fn train_config(&self, spec: &MethodSpec, seed: u64) -> TrainConfig {
        TrainConfig { method: spec.method, gamma: spec.gamma, seed, options: self.train.clone() }
    }

    /// The config with the output location cleared, as stored in reports.
    pub fn portable(&self) -> Self {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c
    }

    /// Hex SHA-256 prefix of the canonical config without seeds and output.
    pub fn hash(&self) -> String {
        let mut c = self.portable();
        c.seeds.clear();
        let text = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.join(self.hash())
    }
}

/// Outcome of one (eps, method, gamma) cell for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub eps: f64,
    pub method: Method,
    pub gamma: f64,
    pub status: String,
    pub error: Option<String>,
    pub matched: Option<MatchReport>,
    pub r2: Option<R2Report>,
    pub train_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub fastica_converged: Option<bool>,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn mean_corr(&self) -> Option<f64> {
        self.matched.as_ref().map(|m| m.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub results: Vec<RunResult>,
}

/// Trained artifacts kept alongside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub eps: f64,
    pub method: Method,
    pub gamma: f64,
    pub whitening: WhiteningTransform,
    pub model: Model,
}

const CHECKPOINT_FORMAT: &str = "robica-checkpoint";

impl Checkpoint {
    pub fn file_name(eps: f64, spec: &MethodSpec) -> String {
        format!("{}_g{}_eps{}.json", spec.method, spec.gamma, eps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Input(format!("{} is not a checkpoint", path.display())));
        }
        Ok(c)
    }
}

struct CellArtifacts {
    result: RunResult,
    trace: Vec<EpochRecord>,
    checkpoint: Option<Checkpoint>,
}

/// Observations of the outlier-free sources through the recorded mixing,
/// whitened with the training transform.
pub fn clean_observations(data: &LabeledSeries, whitening: &WhiteningTransform) -> Result<Matrix> {
    apply_whitening(whitening, &data.mixing.apply(&data.sources_clean)?)
}

/// Evaluate a trained model against the clean sources at every time point.
pub fn evaluate_model(
    model: &Model,
    method: Method,
    whitening: &WhiteningTransform,
    data: &LabeledSeries,
    options: &EvalOptions,
    seed: Seed,
) -> Result<(MatchReport, R2Report, Option<bool>)> {
    let features = model.features(&clean_observations(data, whitening)?)?;
    if method.uses_segments() {
        // h is already nonnegative (abs output layer) and estimates |s| up to
        // an affine map; FastICA resolves the linear part
        let ica = fastica(&features, options.fastica, seed)?;
        let truth = data.sources_clean.map(f64::abs);
        let matched = matched_mean_abs_corr(&ica.components, &truth)?;
        let r2 = linear_identifiability_r2(&features, &truth)?;
        Ok((matched, r2, Some(ica.converged)))
    } else {
        let matched = matched_mean_abs_corr(&features, &data.sources_clean)?;
        let r2 = linear_identifiability_r2(&features, &data.sources_clean)?;
        Ok((matched, r2, None))
    }
}

fn run_cell(
    config: &ExperimentConfig,
    hash: &str,
    seed: u64,
    eps: f64,
    spec: &MethodSpec,
    data: &LabeledSeries,
    whitening: &WhiteningTransform,
    x: &Matrix,
) -> CellArtifacts {
    let attempt = || -> Result<(RunResult, Vec<EpochRecord>, Checkpoint)> {
        let tc = config.train_config(spec, seed);
        let outcome = train(x, &data.aux, &tc)?;
        let (matched, r2, converged) =
            evaluate_model(&outcome.model, spec.method, whitening, data, &config.evaluation, Seed(seed))?;
        let result = RunResult {
            eps,
            method: spec.method,
            gamma: spec.gamma,
            status: "ok".into(),
            error: None,
            matched: Some(matched),
            r2: Some(r2),
            train_accuracy: Some(outcome.accuracy),
            final_loss: outcome.trace.last().map(|r| r.loss),
            fastica_converged: converged,
        };
        let checkpoint = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            toolkit_version: VERSION.into(),
            config_hash: hash.into(),
            seed,
            eps,
            method: spec.method,
            gamma: spec.gamma,
            whitening: whitening.clone(),
            model: outcome.model,
        };
        Ok((result, outcome.trace, checkpoint))
    };
    match attempt() {
        Ok((result, trace, checkpoint)) => CellArtifacts { result, trace, checkpoint: Some(checkpoint) },
        Err(e) => {
            log::error!("seed {seed}, eps {eps}, {}: {e}", spec.label());
            CellArtifacts { result: failed(eps, spec, &e), trace: Vec::new(), checkpoint: None }
        }
    }
}

fn failed(eps: f64, spec: &MethodSpec, e: &Error) -> RunResult {
    RunResult {
        eps,
        method: spec.method,
        gamma: spec.gamma,
        status: "failed".into(),
        error: Some(e.to_string()),
        matched: None,
        r2: None,
        train_accuracy: None,
        final_loss: None,
        fastica_converged: None,
    }
}

/// Run every (eps, method) cell for one seed and write its directory.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedReport> {
    let hash = config.hash();
    let dir = config.run_dir().join(seed.to_string());
    fs::create_dir_all(dir.join("checkpoints"))?;
    let mut cells = Vec::new();
    for &eps in &config.eps {
        let contamination = ContaminationSpec { eps, family: config.outliers.clone() };
        let prepared = config.data.generate(&contamination, Seed(seed)).and_then(|data| {
            let w = fit_whitening(&data.x, config.whitening)?;
            let x = apply_whitening(&w, &data.x)?;
            Ok((data, w, x))
        });
        match prepared {
            Ok((data, w, x)) => {
                if config.save_datasets {
                    data.save(&dir.join(format!("dataset_eps{eps}.json")))?;
                }
                for spec in &config.methods {
                    log::info!("seed {seed}, eps {eps}: training {}", spec.label());
                    cells.push(run_cell(config, &hash, seed, eps, spec, &data, &w, &x));
                }
            }
            Err(e) => {
                log::error!("seed {seed}, eps {eps}: data preparation failed: {e}");
                for spec in &config.methods {
                    cells.push(CellArtifacts { result: failed(eps, spec, &e), trace: Vec::new(), checkpoint: None });
                }
            }
        }
    }

    for cell in &cells {
        if let Some(cp) = &cell.checkpoint {
            let spec = MethodSpec { method: cp.method, gamma: cp.gamma };
            cp.save(&dir.join("checkpoints").join(Checkpoint::file_name(cp.eps, &spec)))?;
        }
    }
    write_loss_trace(&dir.join("loss_trace.csv"), &hash, seed, &cells)?;
    let report = SeedReport {
        toolkit_version: VERSION.into(),
        config_hash: hash.clone(),
        seed,
        config: config.portable(),
        results: cells.into_iter().map(|c| c.result).collect(),
    };
    write_eval_csv(&dir.join("eval.csv"), &report)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Serialize)]
struct TraceRow<'a> {
    config_hash: &'a str,
    toolkit_version: &'a str,
    seed: u64,
    eps: f64,
    method: Method,
    gamma: f64,
    phase: &'a str,
    epoch: usize,
    loss: f64,
    grad_norm: f64,
}

fn write_loss_trace(path: &Path, hash: &str, seed: u64, cells: &[CellArtifacts]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut wrote = false;
    for cell in cells {
        for r in &cell.trace {
            w.serialize(TraceRow {
                config_hash: hash,
                toolkit_version: VERSION,
                seed,
                eps: cell.result.eps,
                method: cell.result.method,
                gamma: cell.result.gamma,
                phase: r.phase.name(),
                epoch: r.epoch,
                loss: r.loss,
                grad_norm: r.grad_norm,
            })?;
            wrote = true;
        }
    }
    if !wrote {
        w.write_record([
            "config_hash", "toolkit_version", "seed", "eps", "method", "gamma", "phase", "epoch", "loss",
            "grad_norm",
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EvalRow<'a> {
    config_hash: &'a str,
    toolkit_version: &'a str,
    seed: u64,
    eps: f64,
    method: Method,
    gamma: f64,
    status: &'a str,
    matched_abs_corr: Option<f64>,
    r2: Option<f64>,
    train_accuracy: Option<f64>,
    final_loss: Option<f64>,
    fastica_converged: Option<bool>,
}

pub fn write_eval_csv(path: &Path, report: &SeedReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &report.results {
        w.serialize(EvalRow {
            config_hash: &report.config_hash,
            toolkit_version: &report.toolkit_version,
            seed: report.seed,
            eps: r.eps,
            method: r.method,
            gamma: r.gamma,
            status: &r.status,
            matched_abs_corr: r.mean_corr(),
            r2: r.r2.as_ref().map(|x| x.mean),
            train_accuracy: r.train_accuracy,
            final_loss: r.final_loss,
            fastica_converged: r.fastica_converged,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub run_dir: PathBuf,
    pub reports: Vec<SeedReport>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutcome {
    pub fn failures(&self) -> usize {
        self.reports.iter().flat_map(|r| &r.results).filter(|r| !r.is_ok()).count()
    }
}

/// Run all seeds on `threads` worker threads, then aggregate.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<ExperimentOutcome> {
    config.validate()?;
    let run_dir = config.run_dir();
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    let seeds = &config.seeds;
    let go = || crate::parallel::map_indexed(seeds.len(), |i| run_seed(config, seeds[i]));
    let results = with_threads(threads, go);
    let reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = emit_report(&run_dir)?;
    Ok(ExperimentOutcome { run_dir, reports, summary })
}

/// `threads == 0` uses the global pool.
#[cfg(feature = "parallel")]
fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T: Send>(_threads: usize, f: impl FnOnce() -> T + Send) -> T {
    f()
}

/// Aggregate row keyed by (eps, method, gamma).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub toolkit_version: String,
    pub eps: f64,
    pub method: Method,
    pub gamma: f64,
    pub n: usize,
    pub failed: usize,
    pub mean_abs_corr: f64,
    pub std_abs_corr: f64,
    pub mean_r2: f64,
    pub std_r2: f64,
}

impl SummaryRow {
    pub fn series(&self) -> String {
        MethodSpec { method: self.method, gamma: self.gamma }.label()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = crate::numerics::mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

/// Read every `<seed>/report.json` under `run_dir` and write `summary.csv`,
/// `table.csv` (rows eps, columns method) and `long.csv`.
pub fn emit_report(run_dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut reports: Vec<SeedReport> = Vec::new();
    if run_dir.is_dir() {
        for entry in fs::read_dir(run_dir)? {
            let path = entry?.path().join("report.json");
            if path.is_file() {
                reports.push(serde_json::from_str(&fs::read_to_string(&path)?)?);
            }
        }
    }
    if reports.is_empty() {
        return Err(Error::Input(format!("no per-seed reports under {}", run_dir.display())));
    }
    reports.sort_by_key(|r| r.seed);
    let hash = reports[0].config_hash.clone();
    if let Some(other) = reports.iter().find(|r| r.config_hash != hash) {
        return Err(Error::Input(format!(
            "reports from different configs in one directory ({hash} vs {})",
            other.config_hash
        )));
    }
    let version = reports[0].toolkit_version.clone();

    // key order: eps, then method, then gamma (bit patterns of non-negative
    // floats sort like the floats)
    let mut groups: BTreeMap<(u64, Method, u64), (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for report in &reports {
        for r in &report.results {
            let g = groups.entry((r.eps.to_bits(), r.method, r.gamma.to_bits())).or_default();
            match (&r.matched, &r.r2) {
                (Some(m), Some(r2)) if r.is_ok() => {
                    g.0.push(m.mean);
                    g.1.push(r2.mean);
                }
                _ => g.2 += 1,
            }
        }
    }
    let summary: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((eps, method, gamma), (corr, r2, failed))| {
            let (mc, sc) = mean_std(&corr);
            let (mr, sr) = mean_std(&r2);
            SummaryRow {
                config_hash: hash.clone(),
                toolkit_version: version.clone(),
                eps: f64::from_bits(eps),
                method,
                gamma: f64::from_bits(gamma),
                n: corr.len(),
                failed,
                mean_abs_corr: mc,
                std_abs_corr: sc,
                mean_r2: mr,
                std_r2: sr,
            }
        })
        .collect();

    let mut w = csv::Writer::from_path(run_dir.join("summary.csv"))?;
    for row in &summary {
        w.serialize(row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(run_dir.join("long.csv"))?;
    w.write_record(["config_hash", "toolkit_version", "x", "y", "std", "n", "series"])?;
    for row in &summary {
        w.write_record([
            hash.clone(),
            version.clone(),
            row.eps.to_string(),
            row.mean_abs_corr.to_string(),
            row.std_abs_corr.to_string(),
            row.n.to_string(),
            row.series(),
        ])?;
    }
    w.flush()?;

    let mut series: Vec<(Method, u64)> = summary.iter().map(|r| (r.method, r.gamma.to_bits())).collect();
    series.sort();
    series.dedup();
    let mut eps_values: Vec<u64> = summary.iter().map(|r| r.eps.to_bits()).collect();
    eps_values.dedup();
    let mut w = csv::Writer::from_path(run_dir.join("table.csv"))?;
    let mut header = vec!["config_hash".to_string(), "toolkit_version".into(), "eps".into()];
    header.extend(series.iter().map(|&(m, g)| MethodSpec { method: m, gamma: f64::from_bits(g) }.label()));
    w.write_record(&header)?;
    for eps in eps_values {
        let mut rec = vec![hash.clone(), version.clone(), f64::from_bits(eps).to_string()];
        for &(m, g) in &series {
            let cell = summary
                .iter()
                .find(|r| r.eps.to_bits() == eps && r.method == m && r.gamma.to_bits() == g)
                .map(|r| r.mean_abs_corr.to_string())
                .unwrap_or_default();
            rec.push(cell);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(summary)
}

/// Re-evaluate every checkpoint of a run directory against regenerated data.
pub fn reevaluate(run_dir: &Path) -> Result<Vec<SeedReport>> {
    let config: ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(run_dir.join("config.json"))?)?;
    let hash = config.hash();
    let mut out = Vec::new();
    for &seed in &config.seeds_present(run_dir)? {
        let dir = run_dir.join(seed.to_string());
        let mut results = Vec::new();
        for &eps in &config.eps {
            let contamination = ContaminationSpec { eps, family: config.outliers.clone() };
            let data = config.data.generate(&contamination, Seed(seed))?;
            for spec in &config.methods {
                let path = dir.join("checkpoints").join(Checkpoint::file_name(eps, spec));
                if !path.is_file() {
                    continue;
                }
                let cp = Checkpoint::load(&path)?;
                if cp.config_hash != hash {
                    return Err(Error::Input(format!("{} belongs to another config", path.display())));
                }
                let r = match evaluate_model(&cp.model, spec.method, &cp.whitening, &data, &config.evaluation, Seed(seed)) {
                    Ok((matched, r2, converged)) => RunResult {
                        eps,
                        method: spec.method,
                        gamma: spec.gamma,
                        status: "ok".into(),
                        error: None,
                        matched: Some(matched),
                        r2: Some(r2),
                        train_accuracy: None,
                        final_loss: None,
                        fastica_converged: converged,
                    },
                    Err(e) => failed(eps, spec, &e),
                };
                results.push(r);
            }
        }
        let report = SeedReport {
            toolkit_version: VERSION.into(),
            config_hash: hash.clone(),
            seed,
            config: config.portable(),
            results,
        };
        write_eval_csv(&dir.join("reeval.csv"), &report)?;
        out.push(report);
    }
    Ok(out)
}

impl ExperimentConfig {
    fn seeds_present(&self, run_dir: &Path) -> Result<Vec<u64>> {
        let mut seeds = Vec::new();
        for entry in fs::read_dir(run_dir)? {
            let entry = entry?;
            if entry.path().join("report.json").is_file() {
                if let Some(s) = entry.file_name().to_str().and_then(|s| s.parse().ok()) {
                    seeds.push(s);
                }
            }
        }
        seeds.sort_unstable();
        Ok(seeds)
    }
}
