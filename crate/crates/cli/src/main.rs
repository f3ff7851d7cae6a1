use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robica::causal::{run_causal, CausalConfig};
use robica::datagen::ContaminationSpec;
use robica::error::{Error, Result};
use robica::experiment::{emit_report, reevaluate, run_experiment, ExperimentConfig};
use robica::oracle::{run_verification, write_checks_csv, VerifyOptions};
use robica::rng::Seed;

#[derive(Parser)]
#[command(name = "robica", version, about = "Robust nonlinear ICA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and save the datasets of an experiment
    Gen(Common),
    /// Train, evaluate and aggregate every seed
    Train(Common),
    /// Re-evaluate saved checkpoints against regenerated data
    Eval(Common),
    /// Run the oracle suite; exit status 0 iff every check passes
    Verify(Common),
    /// Causal direction on the bivariate SEM
    Causal(Common),
    /// Re-aggregate the per-seed reports of a run directory
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// replace the config's seed list with 0..N
    #[arg(long, value_name = "N")]
    seeds: Option<u64>,
    /// output directory (overrides the config)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// worker threads; 0 uses every core
    #[arg(long, value_name = "N", default_value_t = 0)]
    parallel: usize,
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// run directory holding <seed>/report.json
    #[arg(value_name = "RUN_DIR", required_unless_present = "config")]
    run_dir: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::new().parse_filters(level).try_init();
}

fn require_config(c: &Common) -> Result<&Path> {
    c.config
        .as_deref()
        .ok_or_else(|| Error::Config("field `config`: --config PATH is required".into()))
}

fn experiment(c: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(require_config(c)?)?;
    if let Some(n) = c.seeds {
        config.seeds = (0..n).collect();
    }
    if let Some(out) = &c.out {
        config.output = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn gen(c: &Common) -> Result<()> {
    let config = experiment(c)?;
    let run_dir = config.run_dir();
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    for &seed in &config.seeds {
        let dir = run_dir.join(seed.to_string());
        fs::create_dir_all(&dir)?;
        for &eps in &config.eps {
            let contamination = ContaminationSpec { eps, family: config.outliers.clone() };
            let data = config.data.generate(&contamination, Seed(seed))?;
            let path = dir.join(format!("dataset_eps{eps}.json"));
            data.save(&path)?;
            log::info!("wrote {}", path.display());
        }
    }
    println!("{}", run_dir.display());
    Ok(())
}

fn train(c: &Common) -> Result<bool> {
    let config = experiment(c)?;
    let outcome = run_experiment(&config, c.parallel)?;
    for row in &outcome.summary {
        println!(
            "eps {:<5} {:<12} n {:>2} failed {} corr {:.4} +- {:.4}",
            row.eps,
            row.series(),
            row.n,
            row.failed,
            row.mean_abs_corr,
            row.std_abs_corr
        );
    }
    println!("{}", outcome.run_dir.display());
    Ok(outcome.failures() == 0)
}

fn eval(c: &Common) -> Result<bool> {
    let config = experiment(c)?;
    let reports = reevaluate(&config.run_dir())?;
    let mut ok = true;
    for report in &reports {
        for r in &report.results {
            ok &= r.is_ok();
            let corr = r.mean_corr().map(|v| format!("{v:.4}")).unwrap_or_else(|| r.status.clone());
            println!("seed {} eps {} {:?} g={} {corr}", report.seed, r.eps, r.method, r.gamma);
        }
    }
    Ok(ok)
}

fn verify(c: &Common) -> Result<bool> {
    let options = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize::<_, VerifyOptions>(de)
                .map_err(|e| Error::Config(format!("field `{}`: {}", e.path(), e.inner())))?
        }
        None => VerifyOptions::default(),
    };
    let checks = run_verification(&options)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&out)?;
    let path = out.join("verify.csv");
    write_checks_csv(&checks, &path)?;
    let failed: Vec<_> = checks.iter().filter(|c| !c.pass).collect();
    for f in &failed {
        println!("FAIL {} / {}: expected {} got {}", f.instance, f.quantity, f.expected, f.got);
    }
    println!("{} checks, {} failed, written to {}", checks.len(), failed.len(), path.display());
    Ok(failed.is_empty())
}

fn causal(c: &Common) -> Result<bool> {
    let mut config = CausalConfig::load(require_config(c)?)?;
    if let Some(n) = c.seeds {
        config.seeds = (0..n).collect();
    }
    if let Some(out) = &c.out {
        config.output = out.clone();
    }
    config.validate()?;
    let outcome = run_causal(&config)?;
    for r in &outcome.records {
        println!("seed {} truth {:?} verdict {:?} {}", r.seed, r.truth, r.direction(), r.status);
    }
    println!(
        "correct {}/{} reversed {} failed {}; {}",
        outcome.correct(),
        outcome.records.len(),
        outcome.reversed(),
        outcome.failures(),
        outcome.run_dir.display()
    );
    Ok(outcome.failures() == 0)
}

fn report(a: &ReportArgs) -> Result<bool> {
    let dir = match &a.run_dir {
        Some(d) => d.clone(),
        None => experiment(&a.common)?.run_dir(),
    };
    let summary = emit_report(&dir)?;
    for row in &summary {
        println!("eps {:<5} {:<12} corr {:.4} +- {:.4}", row.eps, row.series(), row.mean_abs_corr, row.std_abs_corr);
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Gen(c)
        | Command::Train(c)
        | Command::Eval(c)
        | Command::Verify(c)
        | Command::Causal(c) => c,
        Command::Report(a) => &a.common,
    };
    init_logging(common.verbose);
    robica::parallel::set_threads(common.parallel);
    let result = match &cli.command {
        Command::Gen(c) => gen(c).map(|_| true),
        Command::Train(c) => train(c),
        Command::Eval(c) => eval(c),
        Command::Verify(c) => verify(c),
        Command::Causal(c) => causal(c),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
