//! The `sddgp` command-line tool.
//!
//! Exit codes: 0 on success, 1 on a numerical failure (divergence or a
//! failed factorisation) and 2 on usage, configuration or I/O errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    averaging_name, cache_rows, config_hash, load, unscale, AblateConfig, Cell, CellPlan, DataConfig, FitConfig,
    PreparedData, SampleConfig, SolverConfig, ThompsonRunConfig,
};
use crate::data::{r2, rmse};
use crate::error::{Error, Result};
use crate::kernel::{KernelOperator, KernelSpec};
use crate::objective::{direct_solve, RegressionProblem};
use crate::posterior::{
    evaluate_samples, exact_posterior, gaussian_nll, mean_predict, sample_moments, PathwiseSampler, SampleArtifact,
};
use crate::solver::{cg_solve, gd_solve, sdd_solve, PivotedCholesky, Probes, SolveReport, Termination, TraceEntry};
use crate::thompson;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sddgp",
    version,
    about = "Gaussian-process regression with stochastic dual descent"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the posterior-mean coefficients and write a trace.
    Fit(CommonArgs),
    /// Draw pathwise posterior samples and report the predictive NLL.
    Sample(CommonArgs),
    /// Run a grid of solver configurations.
    Ablate(CommonArgs),
    /// Run the parallel Thompson-sampling benchmark.
    Thompson(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the run seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "sddgp-out")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Validate the configuration and exit without computing.
    #[arg(long)]
    pub check: bool,
}

/// Why a command failed.
#[derive(Debug)]
pub enum Failure {
    Numerical(String),
    Usage(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Numerical(_) => EXIT_NUMERICAL,
            Failure::Usage(_) => EXIT_USAGE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Numerical(m) | Failure::Usage(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } | Error::Factorisation(_) => Failure::Numerical(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::from(Error::from(e))
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

pub fn run(cli: &Cli) -> std::result::Result<String, Failure> {
    let args = match &cli.command {
        Command::Fit(a) | Command::Sample(a) | Command::Ablate(a) | Command::Thompson(a) => a,
    };
    if args.workers == 0 {
        return Err(Failure::Usage("--workers must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Thompson(a) => cmd_thompson(a),
    })
}

fn base_dir(config: &Path) -> PathBuf {
    match config.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    version: &'static str,
    config_sha256: String,
    seeds: BTreeMap<&'static str, u64>,
    outputs: Vec<String>,
    metrics: BTreeMap<String, Value>,
    /// Run-dependent values; everything outside this field is reproducible.
    metadata: Metadata,
}

#[derive(Serialize)]
struct Metadata {
    timestamp_unix: u64,
    wall_seconds: f64,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    metrics: BTreeMap<String, Value>,
    started: Instant,
}

impl Outputs {
    fn new(dir: &Path, started: Instant) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            metrics: BTreeMap::new(),
            started,
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn metric(&mut self, key: &str, value: impl Into<Value>) {
        self.metrics.insert(key.to_string(), value.into());
    }

    fn finish<T: Serialize>(
        mut self,
        command: &'static str,
        cfg: &T,
        seeds: BTreeMap<&'static str, u64>,
    ) -> Result<()> {
        let timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.files.push("manifest.json".into());
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: config_hash(cfg)?,
            seeds,
            outputs: self.files.clone(),
            metrics: std::mem::take(&mut self.metrics),
            metadata: Metadata {
                timestamp_unix,
                wall_seconds: self.started.elapsed().as_secs_f64(),
            },
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn data_seeds(data: &DataConfig, seeds: &mut BTreeMap<&'static str, u64>) {
    match data {
        DataConfig::Synthetic { seed, .. } => {
            seeds.insert("data", *seed);
        }
        DataConfig::Csv { split: Some(s), .. } | DataConfig::Fingerprints { split: Some(s), .. } => {
            seeds.insert("split", s.seed);
        }
        _ => {}
    }
}

/// Training problem on the centred targets.
fn problem(spec: &KernelSpec, data: &PreparedData, row_cache: bool) -> Result<RegressionProblem> {
    let op = KernelOperator::new(spec.clone(), data.train.inputs.clone())?.with_row_cache(cache_rows(row_cache));
    RegressionProblem::from_operator(Arc::new(op), data.train.targets.add_scalar(-spec.prior_mean))
}

fn probes(p: &RegressionProblem, data: &PreparedData, reference: bool) -> Result<Probes> {
    let mut probes = Probes::none();
    if reference {
        probes = probes.with_reference(p, direct_solve(p)?)?;
    }
    if let Some(t) = &data.test {
        probes = probes.with_test(p, &t.inputs, t.targets.clone())?;
    }
    Ok(probes)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn trace_metrics(out: &mut Outputs, report: &SolveReport) {
    out.metric("termination", report.termination.name());
    out.metric("steps", report.steps);
    if let Some(last) = report.last() {
        for (k, v) in [
            ("knorm_sq", last.knorm_sq),
            ("k2norm_sq", last.k2norm_sq),
            ("rmse", last.rmse),
            ("residual", last.residual),
        ] {
            if let Some(v) = v {
                out.metric(k, v);
            }
        }
    }
}

fn solve(cfg: &FitConfig, p: &RegressionProblem, probes: &Probes) -> Result<SolveReport> {
    match &cfg.solver {
        SolverConfig::Sdd(c) => sdd_solve(p, c, probes),
        SolverConfig::Gd(c) => gd_solve(p, c, probes),
        SolverConfig::Cg(c) => {
            let pre = match c.preconditioner_rank {
                Some(r) if r > 0 => Some(PivotedCholesky::new(p.operator(), r.min(p.len()))?),
                _ => None,
            };
            cg_solve(p, c, pre.as_ref(), probes)
        }
        SolverConfig::Direct => {
            let start = Instant::now();
            let coefficients = direct_solve(p)?;
            let entry: TraceEntry = probes.snapshot(p, &coefficients, 0, start.elapsed().as_secs_f64())?;
            Ok(SolveReport {
                coefficients,
                trace: vec![entry],
                termination: Termination::Completed,
                steps: 0,
            })
        }
    }
}

fn validate_fit(cfg: &FitConfig) -> Result<()> {
    cfg.kernel.validate()?;
    cfg.data.validate()?;
    match &cfg.solver {
        SolverConfig::Sdd(c) => {
            let n = match cfg.data {
                DataConfig::Synthetic { n, .. } => n,
                _ => c.batch_size.max(1),
            };
            c.validate(n)
        }
        SolverConfig::Cg(c) => c.validate(),
        SolverConfig::Gd(c) => c.validate(),
        SolverConfig::Direct => Ok(()),
    }
}

fn cmd_fit(args: &CommonArgs) -> std::result::Result<String, Failure> {
    let started = Instant::now();
    let mut cfg: FitConfig = load(&args.config)?;
    let mut seeds = BTreeMap::new();
    if let SolverConfig::Sdd(c) = &mut cfg.solver {
        if let Some(s) = args.seed {
            c.seed = s;
        }
        seeds.insert("solver", c.seed);
    }
    data_seeds(&cfg.data, &mut seeds);
    validate_fit(&cfg)?;
    if args.check {
        return Ok("configuration is valid".into());
    }
    let data = cfg.data.prepare(&cfg.kernel, &base_dir(&args.config))?;
    let p = problem(&cfg.kernel, &data, cfg.row_cache)?;
    let probes = probes(&p, &data, cfg.reference)?;
    let report = solve(&cfg, &p, &probes)?;

    let mut out = Outputs::new(&args.out, started)?;
    out.write(
        "coefficients.json",
        serde_json::to_string(&json!({ "coefficients": report.coefficients.as_slice() }))? + "\n",
    )?;
    out.write("trace.csv", report.trace_csv(cfg.trace_seconds))?;
    trace_metrics(&mut out, &report);
    if let Some(test) = &data.test {
        let pred = mean_predict(&report.coefficients, p.operator(), &test.inputs)?;
        out.metric("test_rmse", rmse(&pred, &test.targets)?);
        if let Ok(v) = r2(&pred, &test.targets) {
            out.metric("test_r2", v);
        }
        let original = unscale(&pred, &data.target_scaling);
        let truth = unscale(&test.targets, &data.target_scaling);
        let mut csv = String::from("prediction,target\n");
        for (a, b) in original.iter().zip(truth.iter()) {
            csv.push_str(&format!("{a:?},{b:?}\n"));
        }
        out.write("predictions.csv", csv)?;
    }
    if let Some(s) = &data.target_scaling {
        out.write("target_scaling.json", serde_json::to_string(s)? + "\n")?;
    }
    let diverged = report.diverged();
    let steps = report.steps;
    let dir = out.dir.clone();
    out.finish("fit", &cfg, seeds)?;
    if diverged {
        return Err(Failure::Numerical(format!(
            "solver diverged at step {steps}; partial outputs in {}",
            dir.display()
        )));
    }
    Ok(format!(
        "fit: {} after {steps} steps; outputs in {}",
        report.termination.name(),
        dir.display()
    ))
}

fn cmd_sample(args: &CommonArgs) -> std::result::Result<String, Failure> {
    let started = Instant::now();
    let mut cfg: SampleConfig = load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut seeds = BTreeMap::from([("samples", cfg.seed)]);
    data_seeds(&cfg.data, &mut seeds);
    cfg.kernel.validate()?;
    cfg.data.validate()?;
    if cfg.num_samples == 0 {
        return Err(Failure::Usage("num_samples must be positive".into()));
    }
    if args.check {
        return Ok("configuration is valid".into());
    }
    let data = cfg.data.prepare(&cfg.kernel, &base_dir(&args.config))?;
    let op = Arc::new(
        KernelOperator::new(cfg.kernel.clone(), data.train.inputs.clone())?.with_row_cache(cache_rows(cfg.row_cache)),
    );
    let sampler = PathwiseSampler::new(op.clone(), &data.train.targets, cfg.sampling.clone())?;
    let samples = sampler.draw_many(cfg.seed, cfg.num_samples)?;

    let mut out = Outputs::new(&args.out, started)?;
    out.metric("num_samples", cfg.num_samples);
    if let Some(test) = &data.test {
        let ev = evaluate_samples(&samples, &op, &test.inputs)?;
        let mut csv = String::from("mean,variance\n");
        if samples.len() >= 2 {
            let (mean, var) = sample_moments(&ev)?;
            out.metric("nll", gaussian_nll(&mean, &var, &test.targets, op.noise())?);
            for (m, v) in mean.iter().zip(var.iter()) {
                csv.push_str(&format!("{m:?},{v:?}\n"));
            }
        } else {
            for m in ev.row(0).iter() {
                csv.push_str(&format!("{m:?},\n"));
            }
        }
        out.write("predictions.csv", csv)?;
        if cfg.oracle {
            let (mean, cov) = exact_posterior(&cfg.kernel, &data.train.inputs, &data.train.targets, &test.inputs)?;
            out.metric(
                "exact_nll",
                gaussian_nll(&mean, &DVector::from(cov.diagonal()), &test.targets, op.noise())?,
            );
        }
    }
    out.write(
        "samples.json",
        serde_json::to_string(&SampleArtifact::new(&op, samples))? + "\n",
    )?;
    let dir = out.dir.clone();
    out.finish("sample", &cfg, seeds)?;
    Ok(format!(
        "sample: {} samples; outputs in {}",
        cfg.num_samples,
        dir.display()
    ))
}

struct CellOutcome {
    trace: Option<String>,
    status: String,
    steps: Option<usize>,
    last: Option<TraceEntry>,
}

fn run_cell(cfg: &AblateConfig, cell: &Cell, p: &RegressionProblem, probes: &Probes) -> CellOutcome {
    let result = match cell.plan(&cfg.base) {
        CellPlan::Unsupported(why) => {
            return CellOutcome {
                trace: None,
                status: format!("unsupported: {why}"),
                steps: None,
                last: None,
            }
        }
        CellPlan::Sdd(c) => sdd_solve(p, &c, probes),
        CellPlan::Gd(c) => gd_solve(p, &c, probes),
    };
    match result {
        Ok(r) => CellOutcome {
            trace: Some(r.trace_csv(cfg.trace_seconds)),
            status: r.termination.name().to_string(),
            steps: Some(r.steps),
            last: r.last().cloned(),
        },
        Err(e) => CellOutcome {
            trace: None,
            status: format!("error: {e}"),
            steps: None,
            last: None,
        },
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_ablate(args: &CommonArgs) -> std::result::Result<String, Failure> {
    let started = Instant::now();
    let mut cfg: AblateConfig = load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.base.seed = s;
    }
    let mut seeds = BTreeMap::from([("solver", cfg.base.seed)]);
    data_seeds(&cfg.data, &mut seeds);
    cfg.kernel.validate()?;
    cfg.data.validate()?;
    let cells = cfg.cells();
    if args.check {
        return Ok(format!("configuration is valid ({} cells)", cells.len()));
    }
    let data = cfg.data.prepare(&cfg.kernel, &base_dir(&args.config))?;
    let p = problem(&cfg.kernel, &data, cfg.row_cache)?;
    let probes = probes(&p, &data, cfg.reference)?;
    let outcomes: Vec<CellOutcome> = cells.par_iter().map(|c| run_cell(&cfg, c, &p, &probes)).collect();

    let mut out = Outputs::new(&args.out, started)?;
    let mut summary = String::from(
        "cell,objective,estimator,step_size_times_n,batch_size,averaging,status,steps,knorm_sq,k2norm_sq,rmse\n",
    );
    let mut diverged = 0;
    for (i, (cell, o)) in cells.iter().zip(&outcomes).enumerate() {
        if let Some(t) = &o.trace {
            out.write(&format!("cells/cell_{i:04}.csv"), t)?;
        }
        if o.status == Termination::Diverged.name() {
            diverged += 1;
        }
        let last = o.last.as_ref();
        summary.push_str(&format!(
            "{i},{},{},{:e},{},{},{},{},{},{},{}\n",
            cell.objective.name(),
            cell.estimator.name(),
            cell.step_size_times_n,
            cell.batch_size.map(|b| b.to_string()).unwrap_or_default(),
            cell.averaging.as_ref().map(averaging_name).unwrap_or_default(),
            csv_field(&o.status),
            o.steps.map(|s| s.to_string()).unwrap_or_default(),
            fmt_opt(last.and_then(|e| e.knorm_sq)),
            fmt_opt(last.and_then(|e| e.k2norm_sq)),
            fmt_opt(last.and_then(|e| e.rmse)),
        ));
    }
    out.write("summary.csv", summary)?;
    out.metric("cells", cells.len());
    out.metric("diverged_cells", diverged);
    let dir = out.dir.clone();
    out.finish("ablate", &cfg, seeds)?;
    Ok(format!(
        "ablate: {} cells ({diverged} diverged); outputs in {}",
        cells.len(),
        dir.display()
    ))
}

fn cmd_thompson(args: &CommonArgs) -> std::result::Result<String, Failure> {
    let started = Instant::now();
    let mut cfg: ThompsonRunConfig = load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.thompson.seed = s;
    }
    let seeds = BTreeMap::from([("thompson", cfg.thompson.seed)]);
    cfg.thompson.validate()?;
    if args.check {
        return Ok(format!(
            "configuration is valid ({} target evaluations)",
            cfg.thompson.budget()
        ));
    }
    let trace = thompson::run(&cfg.thompson)?;
    let mut out = Outputs::new(&args.out, started)?;
    out.write("trace.csv", trace.to_csv(cfg.trace_seconds))?;
    out.metric("final_best", trace.final_best());
    out.metric("evaluations", trace.evaluations);
    out.metric("best_point", trace.best_point.clone());
    if cfg.control {
        let control = thompson::run_random(&cfg.thompson)?;
        out.write("control_trace.csv", control.to_csv(cfg.trace_seconds))?;
        out.metric("control_final_best", control.final_best());
    }
    let dir = out.dir.clone();
    out.finish("thompson", &cfg, seeds)?;
    Ok(format!(
        "thompson: best {:.6} after {} evaluations; outputs in {}",
        trace.final_best(),
        trace.evaluations,
        dir.display()
    ))
}
