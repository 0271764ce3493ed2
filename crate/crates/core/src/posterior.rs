//! Posterior mean prediction, pathwise posterior samples and the dense
//! small-n posterior used as a reference.
//!
//! A pathwise sample is `f₀ + μ₀ + Σ_i c_i k(x_i, ·)` where `f₀` is a random
//! Fourier prior draw and `c = (K + λI)⁻¹(y − μ₀ − f₀(X) − ζ)` with
//! `ζ ~ N(0, λI)`.

use std::fs;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{sample_rff_with, FeatureMap, DEFAULT_PRIOR_FEATURES};
use crate::kernel::{gram, InputMatrix, KernelOperator, KernelSpec, DEFAULT_GRAM_CAP};
use crate::linalg::dot;
use crate::objective::{DirectSolver, RegressionProblem, DEFAULT_ORACLE_CAP};
use crate::rng::{stream, Component};
use crate::solver::{
    cg_solve, sdd_solve, sdd_solve_batch, CgConfig, EstimatorKind, PivotedCholesky, Probes, SddConfig, SolveReport,
};

/// Number of posterior samples used for the predictive likelihood.
pub const DEFAULT_NUM_SAMPLES: usize = 64;

pub const ARTIFACT_VERSION: u32 = 1;

const EVAL_BLOCK: usize = 256;

/// `μ₀ + Σ_i c_i k(x_i, a)` for every test row `a`.
pub fn mean_predict(coefficients: &DVector<f64>, op: &KernelOperator, test: &InputMatrix) -> Result<DVector<f64>> {
    if coefficients.len() != op.len() {
        return Err(Error::DimensionMismatch {
            expected: op.len(),
            found: coefficients.len(),
        });
    }
    let mu = op.spec().prior_mean;
    let n = op.len();
    let values = (0..test.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |row, t| {
                op.cross_row_into(test.row(t), row)?;
                Ok(mu + dot(row, coefficients.as_slice()))
            },
        )
        .collect::<Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(values))
}

/// One pathwise posterior sample, frozen for re-evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub seed: u64,
    pub index: u64,
    pub feature_map: FeatureMap,
    pub weights: Vec<f64>,
    pub noise_draw: Vec<f64>,
    pub coefficients: Vec<f64>,
}

impl PosteriorSample {
    pub fn coefficient_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients)
    }

    /// `f₀` at every test row.
    pub fn prior_values(&self, test: &InputMatrix) -> Result<DVector<f64>> {
        self.feature_map.prior_values(&self.weights, test)
    }

    /// The sample at every test row; `op` must hold the training inputs.
    pub fn evaluate(&self, op: &KernelOperator, test: &InputMatrix) -> Result<DVector<f64>> {
        let mut values = mean_predict(&self.coefficient_vector(), op, test)?;
        values += self.prior_values(test)?;
        Ok(values)
    }

    /// The sample at a single dense point and its gradient.
    pub fn value_and_gradient(&self, op: &KernelOperator, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let h = op.combination_with_gradient(x, &self.coefficients, grad)?;
        let mut prior_grad = vec![0.0; grad.len()];
        let f = self
            .feature_map
            .weighted_sum_with_gradient(&self.weights, x, &mut prior_grad);
        for (g, p) in grad.iter_mut().zip(&prior_grad) {
            *g += p;
        }
        Ok(op.spec().prior_mean + h + f)
    }
}

/// Linear solver used for the correction coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleSolver {
    Direct,
    Sdd(SddConfig),
    Cg(CgConfig),
}

impl Default for SampleSolver {
    fn default() -> Self {
        SampleSolver::Sdd(SddConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleOptions {
    /// Random Fourier features in the prior draw.
    pub features: usize,
    pub solver: SampleSolver,
    /// When set, `α⋆(y − μ₀)` is solved once with this solver and each sample
    /// only solves for `α⋆(f₀(X) + ζ)` with `solver`.
    pub mean_solver: Option<SampleSolver>,
    /// Forces `w = 0` and `ζ = 0`, so every sample is the mean.
    pub degenerate: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            features: DEFAULT_PRIOR_FEATURES,
            solver: SampleSolver::default(),
            mean_solver: None,
            degenerate: false,
        }
    }
}

/// The random inputs of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDraw {
    pub feature_map: FeatureMap,
    pub weights: Vec<f64>,
    pub noise: Vec<f64>,
}

enum Backend {
    Direct(Arc<DirectSolver>),
    Sdd(SddConfig),
    Cg(CgConfig, Option<PivotedCholesky>),
}

/// Draws pathwise samples against one training set.
pub struct PathwiseSampler {
    op: Arc<KernelOperator>,
    centred: DVector<f64>,
    options: SampleOptions,
    dim: usize,
    backend: Backend,
    mean: Option<DVector<f64>>,
}

impl PathwiseSampler {
    /// `y` are the raw training targets; `μ₀` is taken from the kernel.
    pub fn new(op: Arc<KernelOperator>, y: &DVector<f64>, options: SampleOptions) -> Result<Self> {
        let spec = op.spec();
        if !spec.family.is_stationary() {
            return Err(Error::UnsupportedFamily(spec.family.name()));
        }
        let dim = op.inputs().dim().ok_or(Error::UnsupportedFamily(spec.family.name()))?;
        if y.len() != op.len() {
            return Err(Error::DimensionMismatch {
                expected: op.len(),
                found: y.len(),
            });
        }
        if options.features == 0 {
            return Err(Error::config("number of prior features must be positive"));
        }
        let centred = y.add_scalar(-spec.prior_mean);
        let mut direct = None;
        let backend = prepare(&op, &options.solver, &mut direct)?;
        let mean = match &options.mean_solver {
            Some(s) => {
                let b = prepare(&op, s, &mut direct)?;
                Some(run(&op, &b, centred.clone())?)
            }
            None => None,
        };
        Ok(PathwiseSampler {
            op,
            centred,
            options,
            dim,
            backend,
            mean,
        })
    }

    pub fn operator(&self) -> &KernelOperator {
        &self.op
    }

    pub fn options(&self) -> &SampleOptions {
        &self.options
    }

    /// Mean coefficients, when solved separately.
    pub fn mean_coefficients(&self) -> Option<&DVector<f64>> {
        self.mean.as_ref()
    }

    /// Feature map, weights and noise of sample `index` under `seed`.
    pub fn prior_draw(&self, seed: u64, index: u64) -> Result<PriorDraw> {
        let mut rng = stream(seed, Component::Sample, index);
        let feature_map = sample_rff_with(self.op.spec(), self.dim, self.options.features, &mut rng)?;
        let mut weights: Vec<f64> = (0..feature_map.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let sd = self.op.noise().sqrt();
        let mut noise: Vec<f64> = (0..self.op.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        if self.options.degenerate {
            weights.iter_mut().for_each(|w| *w = 0.0);
            noise.iter_mut().for_each(|z| *z = 0.0);
        }
        Ok(PriorDraw {
            feature_map,
            weights,
            noise,
        })
    }

    /// `f₀(X) + ζ`.
    fn perturbation(&self, draw: &PriorDraw) -> Result<DVector<f64>> {
        let mut v = draw.feature_map.prior_values(&draw.weights, self.op.inputs())?;
        v += DVector::from_column_slice(&draw.noise);
        Ok(v)
    }

    /// Right-hand side actually solved for `draw`.
    fn rhs(&self, draw: &PriorDraw) -> Result<DVector<f64>> {
        let perturbation = self.perturbation(draw)?;
        Ok(match self.mean {
            Some(_) => perturbation,
            None => &self.centred - perturbation,
        })
    }

    fn finish(&self, seed: u64, index: u64, draw: PriorDraw, solution: DVector<f64>) -> PosteriorSample {
        let coefficients = match &self.mean {
            Some(m) if self.options.degenerate => m.clone(),
            Some(m) => m - solution,
            None => solution,
        };
        PosteriorSample {
            seed,
            index,
            feature_map: draw.feature_map,
            weights: draw.weights,
            noise_draw: draw.noise,
            coefficients: coefficients.as_slice().to_vec(),
        }
    }

    /// Sample `index` under `seed`.
    pub fn draw(&self, seed: u64, index: u64) -> Result<PosteriorSample> {
        let draw = self.prior_draw(seed, index)?;
        let solution = if self.mean.is_some() && self.options.degenerate {
            DVector::zeros(self.op.len())
        } else {
            run(&self.op, &self.backend, self.rhs(&draw)?)?
        };
        Ok(self.finish(seed, index, draw, solution))
    }

    /// Samples `0..count` under `seed`.
    pub fn draw_many(&self, seed: u64, count: usize) -> Result<Vec<PosteriorSample>> {
        self.draw_range(seed, 0..count as u64)
    }

    /// Samples with indices in `indices` under `seed`. Random-coordinate SDD
    /// solves share kernel rows across samples, which changes the result
    /// relative to [`PathwiseSampler::draw`] only at rounding level.
    pub fn draw_range(&self, seed: u64, indices: Range<u64>) -> Result<Vec<PosteriorSample>> {
        match &self.backend {
            Backend::Sdd(cfg)
                if cfg.estimator == EstimatorKind::RandomCoordinates && indices.end - indices.start > 1 =>
            {
                let draws = indices
                    .clone()
                    .map(|i| self.prior_draw(seed, i))
                    .collect::<Result<Vec<_>>>()?;
                let rhs = draws.iter().map(|d| self.rhs(d)).collect::<Result<Vec<_>>>()?;
                let solutions = if self.mean.is_some() && self.options.degenerate {
                    rhs.iter().map(|b| DVector::zeros(b.len())).collect()
                } else {
                    sdd_solve_batch(&self.op, &rhs, cfg)?
                        .into_iter()
                        .map(converged)
                        .collect::<Result<Vec<_>>>()?
                };
                Ok(draws
                    .into_iter()
                    .zip(solutions)
                    .zip(indices)
                    .map(|((d, x), i)| self.finish(seed, i, d, x))
                    .collect())
            }
            _ => indices.into_par_iter().map(|i| self.draw(seed, i)).collect(),
        }
    }
}

fn prepare(op: &KernelOperator, solver: &SampleSolver, direct: &mut Option<Arc<DirectSolver>>) -> Result<Backend> {
    Ok(match solver {
        SampleSolver::Direct => {
            let d = match direct {
                Some(d) => d.clone(),
                None => {
                    let d = Arc::new(DirectSolver::new(op)?);
                    *direct = Some(d.clone());
                    d
                }
            };
            Backend::Direct(d)
        }
        SampleSolver::Sdd(cfg) => {
            cfg.validate(op.len())?;
            Backend::Sdd(cfg.clone())
        }
        SampleSolver::Cg(cfg) => {
            cfg.validate()?;
            let pre = match cfg.preconditioner_rank {
                Some(r) if r > 0 && !op.is_empty() => Some(PivotedCholesky::new(op, r.min(op.len()))?),
                _ => None,
            };
            Backend::Cg(cfg.clone(), pre)
        }
    })
}

fn run(op: &Arc<KernelOperator>, backend: &Backend, rhs: DVector<f64>) -> Result<DVector<f64>> {
    match backend {
        Backend::Direct(d) => d.solve(&rhs),
        Backend::Sdd(cfg) => {
            let p = RegressionProblem::from_operator(op.clone(), rhs)?;
            converged(sdd_solve(&p, cfg, &Probes::none())?)
        }
        Backend::Cg(cfg, pre) => {
            let p = RegressionProblem::from_operator(op.clone(), rhs)?;
            converged(cg_solve(&p, cfg, pre.as_ref(), &Probes::none())?)
        }
    }
}

fn converged(r: SolveReport) -> Result<DVector<f64>> {
    if r.diverged() {
        Err(Error::Diverged { step: r.steps })
    } else {
        Ok(r.coefficients)
    }
}

/// A single pathwise sample (index 0 under `seed`).
pub fn draw_pathwise(
    op: Arc<KernelOperator>,
    y: &DVector<f64>,
    options: SampleOptions,
    seed: u64,
) -> Result<PosteriorSample> {
    PathwiseSampler::new(op, y, options)?.draw(seed, 0)
}

/// Dense posterior mean and covariance at the test rows.
pub fn exact_posterior(
    spec: &KernelSpec,
    train: &InputMatrix,
    y: &DVector<f64>,
    test: &InputMatrix,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if y.len() != train.len() {
        return Err(Error::DimensionMismatch {
            expected: train.len(),
            found: y.len(),
        });
    }
    let mu = spec.prior_mean;
    let prior_cov = gram(spec, test, test, DEFAULT_GRAM_CAP)?;
    if train.is_empty() {
        return Ok((DVector::from_element(test.len(), mu), prior_cov));
    }
    let op = KernelOperator::new(spec.clone(), train.clone())?;
    let solver = DirectSolver::with_cap(&op, DEFAULT_ORACLE_CAP)?;
    let cross = gram(spec, train, test, DEFAULT_GRAM_CAP)?;
    let alpha = solver.solve(&y.add_scalar(-mu))?;
    let mean = cross.tr_mul(&alpha).add_scalar(mu);
    let reduction = cross.tr_mul(&solver.solve_matrix(&cross));
    let cov = prior_cov - reduction;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

/// Evaluations of every sample at every test row, `samples × test`.
pub fn evaluate_samples(samples: &[PosteriorSample], op: &KernelOperator, test: &InputMatrix) -> Result<DMatrix<f64>> {
    let n = op.len();
    let k = samples.len();
    if let Some(bad) = samples.iter().find(|s| s.coefficients.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.coefficients.len(),
        });
    }
    let coeffs = DMatrix::from_fn(n, k, |i, s| samples[s].coefficients[i]);
    let mu = op.spec().prior_mean;
    let mut out = DMatrix::zeros(k, test.len());
    let indices: Vec<usize> = (0..test.len()).collect();
    for block in indices.chunks(EVAL_BLOCK) {
        let rows = test.select(block);
        let cross = gram(op.spec(), &rows, op.inputs(), usize::MAX)?;
        let h = cross * &coeffs;
        for (s, sample) in samples.iter().enumerate() {
            let prior = sample.prior_values(&rows)?;
            for (b, &t) in block.iter().enumerate() {
                out[(s, t)] = mu + h[(b, s)] + prior[b];
            }
        }
    }
    Ok(out)
}

/// Per-column mean and unbiased variance of a `samples × points` matrix.
pub fn sample_moments(evaluations: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let k = evaluations.nrows();
    if k < 2 {
        return Err(Error::config("at least two posterior samples are required"));
    }
    let mean = DVector::from_iterator(evaluations.ncols(), evaluations.column_iter().map(|c| c.mean()));
    let var = DVector::from_iterator(
        evaluations.ncols(),
        evaluations
            .column_iter()
            .zip(mean.iter())
            .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64),
    );
    Ok((mean, var))
}

/// Mean over test points of `½log(2π(σ² + λ)) + (y − μ)² / (2(σ² + λ))`.
pub fn gaussian_nll(mean: &DVector<f64>, latent_var: &DVector<f64>, y: &DVector<f64>, noise: f64) -> Result<f64> {
    if mean.len() != y.len() || latent_var.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: mean.len().min(latent_var.len()),
        });
    }
    if y.is_empty() {
        return Err(Error::config("no test points"));
    }
    let total: f64 = mean
        .iter()
        .zip(latent_var.iter())
        .zip(y.iter())
        .map(|((m, v), y)| {
            let s = v + noise;
            0.5 * (std::f64::consts::TAU * s).ln() + (y - m).powi(2) / (2.0 * s)
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Predictive negative log-likelihood from the empirical moments of the
/// samples, with the likelihood variance added.
pub fn predictive_nll(
    samples: &[PosteriorSample],
    op: &KernelOperator,
    test: &InputMatrix,
    test_y: &DVector<f64>,
) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::config("at least two posterior samples are required"));
    }
    let (mean, var) = sample_moments(&evaluate_samples(samples, op, test)?)?;
    gaussian_nll(&mean, &var, test_y, op.noise())
}

/// Serialisable set of samples with everything needed to re-evaluate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleArtifact {
    pub version: u32,
    pub kernel: KernelSpec,
    pub training_inputs: InputMatrix,
    pub samples: Vec<PosteriorSample>,
}

impl SampleArtifact {
    pub fn new(op: &KernelOperator, samples: Vec<PosteriorSample>) -> Self {
        SampleArtifact {
            version: ARTIFACT_VERSION,
            kernel: op.spec().clone(),
            training_inputs: op.inputs().clone(),
            samples,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let artifact: SampleArtifact = serde_json::from_str(&text)?;
        if artifact.version != ARTIFACT_VERSION {
            return Err(Error::config(format!(
                "unsupported sample artifact version {}",
                artifact.version
            )));
        }
        Ok(artifact)
    }

    pub fn operator(&self) -> Result<KernelOperator> {
        KernelOperator::new(self.kernel.clone(), self.training_inputs.clone())
    }

    /// `samples × test` evaluations.
    pub fn evaluate(&self, test: &InputMatrix) -> Result<DMatrix<f64>> {
        let op = self.operator()?;
        let mut out = DMatrix::zeros(self.samples.len(), test.len());
        for (s, sample) in self.samples.iter().enumerate() {
            out.row_mut(s).tr_copy_from(&sample.evaluate(&op, test)?);
        }
        Ok(out)
    }
}
