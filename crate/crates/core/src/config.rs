//! JSON run configurations for the command-line tool.
//!
//! Relative paths inside a configuration resolve against the directory of
//! the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    cap_docking_scores, load_dense_csv, load_fingerprints, split, synth_regression, CsvOptions, Dataset,
    FeatureScaling, SplitSpec, TargetScaling,
};
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, DEFAULT_CACHE_ROWS};
use crate::posterior::{SampleOptions, DEFAULT_NUM_SAMPLES};
use crate::solver::{Averaging, CgConfig, EstimatorKind, GdConfig, Objective, SddConfig};
use crate::thompson::ThompsonConfig;

fn yes() -> bool {
    true
}

fn default_num_samples() -> usize {
    DEFAULT_NUM_SAMPLES
}

/// Where the observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// A GP prior draw under the configured kernel plus Gaussian noise. The
    /// last `test_n` rows form the test set.
    Synthetic {
        n: usize,
        dim: usize,
        #[serde(default)]
        test_n: usize,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default)]
        csv: CsvOptions,
        /// Ignored when `test_path` is given.
        #[serde(default)]
        split: Option<SplitSpec>,
        #[serde(default = "yes")]
        standardise_features: bool,
        #[serde(default = "yes")]
        normalise_targets: bool,
    },
    Fingerprints {
        path: PathBuf,
        targets: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default)]
        test_targets: Option<PathBuf>,
        #[serde(default)]
        split: Option<SplitSpec>,
        #[serde(default)]
        cap_docking_scores: bool,
        #[serde(default)]
        normalise_targets: bool,
    },
}

/// Training data, optional test data and the statistics used to scale them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub target_scaling: Option<TargetScaling>,
    pub feature_scaling: Option<FeatureScaling>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn split_or_whole(ds: Dataset, spec: &Option<SplitSpec>) -> Result<(Dataset, Option<Dataset>)> {
    match spec {
        Some(s) => {
            let (train, test) = split(&ds, s)?;
            Ok((train, Some(test)))
        }
        None => Ok((ds, None)),
    }
}

fn scale_targets(train: Dataset, test: Option<Dataset>) -> Result<(Dataset, Option<Dataset>, TargetScaling)> {
    let scaling = TargetScaling::fit(&train.targets)?;
    let train = Dataset::new(train.inputs, scaling.apply(&train.targets))?;
    let test = test
        .map(|t| Dataset::new(t.inputs, scaling.apply(&t.targets)))
        .transpose()?;
    Ok((train, test, scaling))
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DataConfig::Synthetic { n, dim, .. } if *n == 0 || *dim == 0 => {
                Err(Error::config("synthetic data needs positive n and dim"))
            }
            DataConfig::Csv { split: Some(s), .. } | DataConfig::Fingerprints { split: Some(s), .. }
                if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) =>
            {
                Err(Error::config("split.train_fraction must lie in (0, 1)"))
            }
            DataConfig::Fingerprints {
                test_path,
                test_targets,
                ..
            } if test_path.is_some() != test_targets.is_some() => {
                Err(Error::config("test_path and test_targets must be given together"))
            }
            _ => Ok(()),
        }
    }

    /// Loads, splits and scales the data. Scaling statistics come from the
    /// training fold only.
    pub fn prepare(&self, spec: &KernelSpec, base: &Path) -> Result<PreparedData> {
        self.validate()?;
        match self {
            DataConfig::Synthetic { n, dim, test_n, seed } => {
                let all = synth_regression(n + test_n, *dim, spec, *seed)?;
                let train = all.select(&(0..*n).collect::<Vec<_>>());
                let test = (*test_n > 0).then(|| all.select(&(*n..n + test_n).collect::<Vec<_>>()));
                Ok(PreparedData {
                    train,
                    test,
                    target_scaling: None,
                    feature_scaling: None,
                })
            }
            DataConfig::Csv {
                path,
                test_path,
                csv,
                split,
                standardise_features,
                normalise_targets,
            } => {
                let ds = load_dense_csv(resolve(base, path), csv)?;
                let (mut train, mut test) = match test_path {
                    Some(tp) => (ds, Some(load_dense_csv(resolve(base, tp), csv)?)),
                    None => split_or_whole(ds, split)?,
                };
                let mut feature_scaling = None;
                if *standardise_features {
                    let fs = FeatureScaling::fit(&train.inputs)?;
                    train = Dataset::new(fs.apply(&train.inputs)?, train.targets)?;
                    test = test
                        .map(|t| Dataset::new(fs.apply(&t.inputs)?, t.targets))
                        .transpose()?;
                    feature_scaling = Some(fs);
                }
                let mut target_scaling = None;
                if *normalise_targets {
                    let (tr, te, s) = scale_targets(train, test)?;
                    (train, test, target_scaling) = (tr, te, Some(s));
                }
                Ok(PreparedData {
                    train,
                    test,
                    target_scaling,
                    feature_scaling,
                })
            }
            DataConfig::Fingerprints {
                path,
                targets,
                test_path,
                test_targets,
                split,
                cap_docking_scores: cap,
                normalise_targets,
            } => {
                let load = |p: &Path, t: &Path| -> Result<Dataset> {
                    let mut ds = load_fingerprints(resolve(base, p), resolve(base, t))?;
                    if *cap {
                        cap_docking_scores(&mut ds.targets);
                    }
                    Ok(ds)
                };
                let ds = load(path, targets)?;
                let (mut train, mut test) = match (test_path, test_targets) {
                    (Some(p), Some(t)) => (ds, Some(load(p, t)?)),
                    _ => split_or_whole(ds, split)?,
                };
                let mut target_scaling = None;
                if *normalise_targets {
                    let (tr, te, s) = scale_targets(train, test)?;
                    (train, test, target_scaling) = (tr, te, Some(s));
                }
                Ok(PreparedData {
                    train,
                    test,
                    target_scaling,
                    feature_scaling: None,
                })
            }
        }
    }
}

/// Solver for a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverConfig {
    Sdd(SddConfig),
    Cg(CgConfig),
    Gd(GdConfig),
    Direct,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::Sdd(SddConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: DataConfig,
    pub kernel: KernelSpec,
    /// Cache kernel rows for training sets up to [`DEFAULT_CACHE_ROWS`].
    #[serde(default = "yes")]
    pub row_cache: bool,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Track errors against a direct solve (small problems only).
    #[serde(default)]
    pub reference: bool,
    /// Write wall-clock seconds into the trace.
    #[serde(default)]
    pub trace_seconds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub data: DataConfig,
    pub kernel: KernelSpec,
    #[serde(default = "yes")]
    pub row_cache: bool,
    #[serde(default)]
    pub sampling: SampleOptions,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also report the closed-form Gaussian NLL (small problems only).
    #[serde(default)]
    pub oracle: bool,
}

/// Gradient estimator of an ablation cell; `exact` runs full-batch gradient
/// descent on the chosen objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CellEstimator {
    Exact,
    RandomCoordinates,
    RaoBlackwellisedCoordinates,
    RandomFeatures,
    MixedPrimal {
        #[serde(default = "default_regulariser_features")]
        num_features: usize,
        #[serde(default = "default_clip")]
        clip_norm: Option<f64>,
    },
}

fn default_regulariser_features() -> usize {
    crate::estimator::DEFAULT_REGULARISER_FEATURES
}

fn default_clip() -> Option<f64> {
    Some(crate::estimator::DEFAULT_CLIP_NORM)
}

impl CellEstimator {
    pub fn stochastic(self) -> Option<EstimatorKind> {
        match self {
            CellEstimator::Exact => None,
            CellEstimator::RandomCoordinates => Some(EstimatorKind::RandomCoordinates),
            CellEstimator::RaoBlackwellisedCoordinates => Some(EstimatorKind::RaoBlackwellisedCoordinates),
            CellEstimator::RandomFeatures => Some(EstimatorKind::RandomFeatures),
            CellEstimator::MixedPrimal {
                num_features,
                clip_norm,
            } => Some(EstimatorKind::MixedPrimal {
                num_features,
                clip_norm,
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self.stochastic() {
            None => "exact",
            Some(k) => k.name(),
        }
    }
}

impl From<EstimatorKind> for CellEstimator {
    fn from(k: EstimatorKind) -> Self {
        match k {
            EstimatorKind::RandomCoordinates => CellEstimator::RandomCoordinates,
            EstimatorKind::RaoBlackwellisedCoordinates => CellEstimator::RaoBlackwellisedCoordinates,
            EstimatorKind::RandomFeatures => CellEstimator::RandomFeatures,
            EstimatorKind::MixedPrimal {
                num_features,
                clip_norm,
            } => CellEstimator::MixedPrimal {
                num_features,
                clip_norm,
            },
        }
    }
}

/// Axes of an ablation grid. An empty axis takes its single value from the
/// base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub objective: Vec<Objective>,
    pub estimator: Vec<CellEstimator>,
    pub step_size_times_n: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub averaging: Vec<Averaging>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub data: DataConfig,
    pub kernel: KernelSpec,
    #[serde(default = "yes")]
    pub row_cache: bool,
    /// Settings shared by every cell; `exact` cells use its `steps`,
    /// `momentum` and `snapshot_every`.
    #[serde(default)]
    pub base: SddConfig,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "yes")]
    pub reference: bool,
    #[serde(default)]
    pub trace_seconds: bool,
}

/// One point of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub objective: Objective,
    pub estimator: CellEstimator,
    pub step_size_times_n: f64,
    /// `None` for `exact` cells.
    pub batch_size: Option<usize>,
    pub averaging: Option<Averaging>,
}

/// What a cell runs, or why it cannot run.
#[derive(Debug, Clone, PartialEq)]
pub enum CellPlan {
    Sdd(SddConfig),
    Gd(GdConfig),
    Unsupported(&'static str),
}

pub fn averaging_name(a: &Averaging) -> String {
    match a {
        Averaging::Geometric { r: None } => "geometric".into(),
        Averaging::Geometric { r: Some(r) } => format!("geometric:{r}"),
        Averaging::ArithmeticTail { start } => format!("arithmetic_tail:{start}"),
        Averaging::Last => "last".into(),
    }
}

impl Cell {
    pub fn plan(&self, base: &SddConfig) -> CellPlan {
        match (self.estimator.stochastic(), self.objective) {
            (None, objective) => CellPlan::Gd(GdConfig {
                objective,
                step_size_times_n: self.step_size_times_n,
                steps: base.steps,
                momentum: base.momentum,
                snapshot_every: base.snapshot_every,
            }),
            (Some(EstimatorKind::MixedPrimal { .. }), Objective::Dual) => {
                CellPlan::Unsupported("the mixed primal estimator targets the primal objective")
            }
            (Some(k), Objective::Primal) if !matches!(k, EstimatorKind::MixedPrimal { .. }) => {
                CellPlan::Unsupported("dual estimators target the dual objective")
            }
            (Some(estimator), _) => CellPlan::Sdd(SddConfig {
                step_size_times_n: self.step_size_times_n,
                batch_size: self.batch_size.unwrap_or(base.batch_size),
                averaging: self.averaging.unwrap_or(base.averaging),
                estimator,
                ..base.clone()
            }),
        }
    }
}

impl AblateConfig {
    /// Grid cells in row-major order over objective, estimator, step size,
    /// batch size and averaging. `exact` cells ignore batch size and
    /// averaging and appear once per objective and step size.
    pub fn cells(&self) -> Vec<Cell> {
        let g = &self.grid;
        let b = &self.base;
        let objectives = or(&g.objective, Objective::Dual);
        let estimators = or(&g.estimator, CellEstimator::from(b.estimator));
        let steps = or(&g.step_size_times_n, b.step_size_times_n);
        let batches = or(&g.batch_size, b.batch_size);
        let averagings = or(&g.averaging, b.averaging);
        let mut out = Vec::new();
        for &objective in &objectives {
            for &estimator in &estimators {
                for &step_size_times_n in &steps {
                    if estimator == CellEstimator::Exact {
                        out.push(Cell {
                            objective,
                            estimator,
                            step_size_times_n,
                            batch_size: None,
                            averaging: None,
                        });
                        continue;
                    }
                    for &batch_size in &batches {
                        for &averaging in &averagings {
                            out.push(Cell {
                                objective,
                                estimator,
                                step_size_times_n,
                                batch_size: Some(batch_size),
                                averaging: Some(averaging),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn or<T: Clone>(axis: &[T], fallback: T) -> Vec<T> {
    if axis.is_empty() {
        vec![fallback]
    } else {
        axis.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThompsonRunConfig {
    pub thompson: ThompsonConfig,
    /// Also run the uniform-random acquisition control.
    #[serde(default)]
    pub control: bool,
    #[serde(default)]
    pub trace_seconds: bool,
}

/// Cache size passed to the kernel operator.
pub fn cache_rows(enabled: bool) -> usize {
    if enabled {
        DEFAULT_CACHE_ROWS
    } else {
        0
    }
}

/// Reads and parses a JSON configuration.
pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// SHA-256 of the canonical JSON serialisation, hex encoded.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Targets on the scale they were observed on.
pub fn unscale(pred: &DVector<f64>, scaling: &Option<TargetScaling>) -> DVector<f64> {
    match scaling {
        Some(s) => s.invert(pred),
        None => pred.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_dense_csv;

    fn kernel() -> KernelSpec {
        KernelSpec::matern32(0.5, 1.0, 0.1)
    }

    #[test]
    fn fit_config_defaults() {
        let c: FitConfig = serde_json::from_str(
            r#"{"data": {"kind": "synthetic", "n": 10, "dim": 2},
                "kernel": {"family": "matern32", "length_scale": 0.5, "amplitude": 1.0, "noise": 0.1}}"#,
        )
        .unwrap();
        assert!(c.row_cache && !c.reference && !c.trace_seconds);
        assert_eq!(c.solver, SolverConfig::Sdd(SddConfig::default()));
        assert!(serde_json::from_str::<FitConfig>(r#"{"data": {"kind": "synthetic", "n": 1, "dim": 1}}"#).is_err());
    }

    #[test]
    fn sample_config_defaults_to_64_samples() {
        let c: SampleConfig = serde_json::from_str(
            r#"{"data": {"kind": "synthetic", "n": 10, "dim": 2},
                "kernel": {"family": "matern32", "amplitude": 1.0, "noise": 0.1}}"#,
        )
        .unwrap();
        assert_eq!(c.num_samples, 64);
        assert_eq!(c.sampling.features, 2_000);
    }

    #[test]
    fn synthetic_split_is_train_then_test() {
        let d = DataConfig::Synthetic {
            n: 30,
            dim: 2,
            test_n: 5,
            seed: 4,
        };
        let p = d.prepare(&kernel(), Path::new(".")).unwrap();
        let all = synth_regression(35, 2, &kernel(), 4).unwrap();
        assert_eq!(p.train.targets.as_slice(), &all.targets.as_slice()[..30]);
        assert_eq!(p.test.unwrap().targets.as_slice(), &all.targets.as_slice()[30..]);
    }

    #[test]
    fn csv_data_is_scaled_on_the_training_fold() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_regression(50, 3, &kernel(), 1).unwrap();
        write_dense_csv(dir.path().join("d.csv"), &ds).unwrap();
        let d: DataConfig = serde_json::from_str(r#"{"kind": "csv", "path": "d.csv", "split": {"seed": 2}}"#).unwrap();
        let p = d.prepare(&kernel(), dir.path()).unwrap();
        assert_eq!((p.train.len(), p.test.as_ref().unwrap().len()), (45, 5));
        let mean = p.train.targets.mean();
        let var = p.train.targets.map(|y| (y - mean).powi(2)).mean();
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let back = unscale(&p.train.targets, &p.target_scaling);
        let (orig, _) = split(
            &ds,
            &SplitSpec {
                seed: 2,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        assert!((back - orig.targets).amax() < 1e-12);
        assert!(p.feature_scaling.is_some());
    }

    #[test]
    fn missing_files_are_io_errors() {
        let d = DataConfig::Csv {
            path: "nope.csv".into(),
            test_path: None,
            csv: CsvOptions::default(),
            split: None,
            standardise_features: true,
            normalise_targets: true,
        };
        assert!(matches!(
            d.prepare(&kernel(), Path::new("/nonexistent")),
            Err(Error::Io { .. })
        ));
    }

    fn grid_config(grid: Grid) -> AblateConfig {
        AblateConfig {
            data: DataConfig::Synthetic {
                n: 10,
                dim: 1,
                test_n: 0,
                seed: 0,
            },
            kernel: kernel(),
            row_cache: true,
            base: SddConfig::default(),
            grid,
            reference: true,
            trace_seconds: false,
        }
    }

    #[test]
    fn grid_enumeration() {
        let c = grid_config(Grid {
            objective: vec![Objective::Primal, Objective::Dual],
            estimator: vec![CellEstimator::Exact],
            step_size_times_n: vec![0.1, 1.0, 10.0],
            ..Grid::default()
        });
        let cells = c.cells();
        assert_eq!(cells.len(), 6);
        assert!(matches!(
            cells[0].plan(&c.base),
            CellPlan::Gd(GdConfig {
                objective: Objective::Primal,
                ..
            })
        ));

        let c = grid_config(Grid {
            estimator: vec![CellEstimator::RandomCoordinates, CellEstimator::RandomFeatures],
            batch_size: vec![16, 64],
            averaging: vec![Averaging::Last, Averaging::default()],
            ..Grid::default()
        });
        let cells = c.cells();
        assert_eq!(cells.len(), 8);
        let CellPlan::Sdd(s) = cells[7].plan(&c.base) else {
            panic!()
        };
        assert_eq!((s.batch_size, s.estimator), (64, EstimatorKind::RandomFeatures));

        let one = grid_config(Grid::default()).cells();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].plan(&SddConfig::default()), CellPlan::Sdd(SddConfig::default()));
    }

    #[test]
    fn mismatched_objective_and_estimator_is_unsupported() {
        let cell = Cell {
            objective: Objective::Primal,
            estimator: CellEstimator::RandomCoordinates,
            step_size_times_n: 1.0,
            batch_size: Some(4),
            averaging: Some(Averaging::Last),
        };
        assert!(matches!(cell.plan(&SddConfig::default()), CellPlan::Unsupported(_)));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = grid_config(Grid::default());
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.base.seed = 1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }
}
