//! Parallel Thompson sampling on `[0, 1]^d` against synthetic GP targets.
//!
//! Each round draws `acquisition_batch` pathwise posterior samples, maximises
//! every sample by multi-start projected gradient ascent, observes the target
//! at the maximisers and appends them to the training set.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{sample_rff_with, FeatureMap, DEFAULT_PRIOR_FEATURES};
use crate::kernel::{InputMatrix, KernelOperator, KernelSpec, DEFAULT_CACHE_ROWS};
use crate::posterior::{evaluate_samples, PathwiseSampler, PosteriorSample, SampleOptions, SampleSolver};
use crate::rng::{stream, Component};
use crate::solver::{CgConfig, SddConfig};

/// Length scales of the benchmark grid.
pub const LENGTH_SCALE_GRID: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// A differentiable function on `[0, 1]^d`.
pub trait SmoothFunction: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Value at `x`, with the gradient written to `grad`.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// `g(x) = Σ_j w_j φ_j(x)` with standard-normal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTarget {
    pub feature_map: FeatureMap,
    pub weights: Vec<f64>,
}

impl SynthTarget {
    pub fn new(spec: &KernelSpec, dim: usize, features: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Component::Target, 0);
        let feature_map = sample_rff_with(spec, dim, features, &mut rng)?;
        let weights = (0..feature_map.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(SynthTarget { feature_map, weights })
    }
}

impl SmoothFunction for SynthTarget {
    fn dim(&self) -> usize {
        self.feature_map.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.feature_map.weighted_sum(&self.weights, x)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.feature_map.weighted_sum_with_gradient(&self.weights, x, grad)
    }
}

/// A posterior sample bound to the operator holding its training inputs.
pub struct SampleFunction<'a> {
    sample: &'a PosteriorSample,
    op: &'a KernelOperator,
    dim: usize,
}

impl<'a> SampleFunction<'a> {
    pub fn new(sample: &'a PosteriorSample, op: &'a KernelOperator) -> Result<Self> {
        let dim = op
            .inputs()
            .dim()
            .ok_or(Error::UnsupportedFamily(op.spec().family.name()))?;
        if sample.coefficients.len() != op.len() {
            return Err(Error::DimensionMismatch {
                expected: op.len(),
                found: sample.coefficients.len(),
            });
        }
        if sample.feature_map.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: sample.feature_map.dim(),
            });
        }
        Ok(SampleFunction { sample, op, dim })
    }
}

impl SmoothFunction for SampleFunction<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.dim];
        self.value_and_gradient(x, &mut scratch)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.sample
            .value_and_gradient(self.op, x, grad)
            .expect("dimensions checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaximiserConfig {
    /// Ascent starts per sample, besides the incumbent.
    pub num_starts: usize,
    pub grad_steps: usize,
    /// Ascent step size; `None` uses `10ℓ²/d`.
    pub grad_step_size: Option<f64>,
    /// When positive, this many shared uniform candidates are scored under
    /// every sample and the best `num_starts` of them become the starts.
    pub candidates: usize,
}

impl Default for MaximiserConfig {
    fn default() -> Self {
        MaximiserConfig {
            num_starts: 50,
            grad_steps: 100,
            grad_step_size: None,
            candidates: 0,
        }
    }
}

impl MaximiserConfig {
    pub fn step_size(&self, length_scale: f64, dim: usize) -> f64 {
        self.grad_step_size
            .unwrap_or(10.0 * length_scale * length_scale / dim as f64)
    }
}

/// Projected gradient ascent on `[0, 1]^d` from `start`.
///
/// A step that lowers the value is rejected and the step size halved, so the
/// returned value is never below the value at `start`.
pub fn ascend<F: SmoothFunction + ?Sized>(f: &F, start: &[f64], steps: usize, step_size: f64) -> (Vec<f64>, f64) {
    let d = f.dim();
    let mut x: Vec<f64> = start.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut grad = vec![0.0; d];
    let mut trial_grad = vec![0.0; d];
    let mut value = f.value_and_gradient(&x, &mut grad);
    let mut eta = step_size;
    let mut trial = vec![0.0; d];
    for _ in 0..steps {
        for c in 0..d {
            trial[c] = (x[c] + eta * grad[c]).clamp(0.0, 1.0);
        }
        let v = f.value_and_gradient(&trial, &mut trial_grad);
        if v >= value {
            std::mem::swap(&mut x, &mut trial);
            std::mem::swap(&mut grad, &mut trial_grad);
            value = v;
        } else {
            eta *= 0.5;
        }
    }
    (x, value)
}

/// Best ascent result over `starts`.
pub fn maximise<F: SmoothFunction + ?Sized>(
    f: &F,
    starts: &[Vec<f64>],
    steps: usize,
    step_size: f64,
) -> (Vec<f64>, f64) {
    starts
        .iter()
        .map(|s| ascend(f, s, steps, step_size))
        .fold(
            (Vec::new(), f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
}

/// Inner linear solver for each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThompsonSolver {
    /// Separate SDD solves for the mean and for the zero-mean sample parts.
    Sdd {
        mean: SddConfig,
        samples: SddConfig,
    },
    Cg {
        config: CgConfig,
    },
    Direct,
}

impl Default for ThompsonSolver {
    fn default() -> Self {
        ThompsonSolver::Sdd {
            mean: SddConfig {
                steps: 15_000,
                step_size_times_n: 3.0,
                snapshot_every: 0,
                ..SddConfig::default()
            },
            samples: SddConfig {
                steps: 15_000,
                step_size_times_n: 0.003,
                snapshot_every: 0,
                ..SddConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThompsonConfig {
    pub dim: usize,
    pub length_scale: f64,
    pub amplitude: f64,
    pub init_points: usize,
    pub acquisition_batch: usize,
    pub rounds: usize,
    pub observation_noise_var: f64,
    /// Likelihood variance of the model; `None` uses the observation noise.
    pub model_noise: Option<f64>,
    pub target_features: usize,
    /// Random Fourier features in each posterior sample's prior draw.
    pub sample_features: usize,
    pub solver: ThompsonSolver,
    pub maximiser: MaximiserConfig,
    pub seed: u64,
    /// Training sets up to this size keep a kernel row cache.
    pub row_cache: usize,
}

impl Default for ThompsonConfig {
    fn default() -> Self {
        ThompsonConfig {
            dim: 8,
            length_scale: 0.3,
            amplitude: 1.0,
            init_points: 50_000,
            acquisition_batch: 1_000,
            rounds: 30,
            observation_noise_var: 1e-6,
            model_noise: None,
            target_features: DEFAULT_PRIOR_FEATURES,
            sample_features: DEFAULT_PRIOR_FEATURES,
            solver: ThompsonSolver::default(),
            maximiser: MaximiserConfig::default(),
            seed: 0,
            row_cache: DEFAULT_CACHE_ROWS,
        }
    }
}

impl ThompsonConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("init_points", self.init_points),
            ("acquisition_batch", self.acquisition_batch),
            ("target_features", self.target_features),
            ("sample_features", self.sample_features),
            ("maximiser.grad_steps", self.maximiser.grad_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.maximiser.num_starts == 0 && self.maximiser.candidates == 0 {
            return Err(Error::config("maximiser.num_starts must be positive"));
        }
        if self.maximiser.candidates > 0 && self.maximiser.candidates < self.maximiser.num_starts {
            return Err(Error::config("maximiser.candidates must be at least num_starts"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.observation_noise_var) {
            return Err(Error::config("observation_noise_var must be positive"));
        }
        if let Some(l) = self.model_noise {
            if !positive(l) {
                return Err(Error::config("model_noise must be positive"));
            }
        }
        if !positive(self.length_scale) || !positive(self.amplitude) {
            return Err(Error::config("length_scale and amplitude must be positive"));
        }
        if let Some(s) = self.maximiser.grad_step_size {
            if !positive(s) {
                return Err(Error::config("maximiser.grad_step_size must be positive"));
            }
        }
        let final_n = self.init_points + self.rounds * self.acquisition_batch;
        match &self.solver {
            ThompsonSolver::Sdd { mean, samples } => {
                for c in [mean, samples] {
                    c.validate(final_n.max(c.batch_size))?;
                }
            }
            ThompsonSolver::Cg { config } => config.validate()?,
            ThompsonSolver::Direct => {}
        }
        Ok(())
    }

    /// The model kernel: Matérn-3/2 with zero prior mean.
    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::matern32(
            self.length_scale,
            self.amplitude,
            self.model_noise.unwrap_or(self.observation_noise_var),
        )
    }

    pub fn target(&self) -> Result<SynthTarget> {
        SynthTarget::new(&self.kernel(), self.dim, self.target_features, self.seed)
    }

    /// Total target evaluations of a full run.
    pub fn budget(&self) -> usize {
        self.init_points + self.rounds * self.acquisition_batch
    }

    fn sample_options(&self, round: usize) -> SampleOptions {
        let reseed = |c: &SddConfig, which: u64| SddConfig {
            seed: stream(self.seed, Component::Batch, 2 * round as u64 + which).next_u64(),
            ..c.clone()
        };
        let (solver, mean_solver) = match &self.solver {
            ThompsonSolver::Sdd { mean, samples } => (
                SampleSolver::Sdd(reseed(samples, 1)),
                Some(SampleSolver::Sdd(reseed(mean, 0))),
            ),
            ThompsonSolver::Cg { config } => (SampleSolver::Cg(config.clone()), None),
            ThompsonSolver::Direct => (SampleSolver::Direct, None),
        };
        SampleOptions {
            features: self.sample_features,
            solver,
            mean_solver,
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub n_observations: usize,
    pub best_value: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThompsonTrace {
    pub records: Vec<RoundRecord>,
    /// Target evaluations performed.
    pub evaluations: usize,
    /// Point with the best noise-free target value.
    pub best_point: Vec<f64>,
}

impl ThompsonTrace {
    pub fn best_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best_value).collect()
    }

    pub fn final_best(&self) -> f64 {
        self.records.last().map_or(f64::NEG_INFINITY, |r| r.best_value)
    }

    /// `round,n_observations,best_value,seconds`; seconds are left empty
    /// unless `with_seconds`.
    pub fn to_csv(&self, with_seconds: bool) -> String {
        let mut out = String::from("round,n_observations,best_value,seconds\n");
        for r in &self.records {
            let secs = if with_seconds {
                format!("{:.6}", r.seconds)
            } else {
                String::new()
            };
            out.push_str(&format!(
                "{},{},{:e},{}\n",
                r.round, r.n_observations, r.best_value, secs
            ));
        }
        out
    }
}

/// The growing training set and the noise-free best so far.
struct State<'a> {
    cfg: &'a ThompsonConfig,
    target: &'a dyn SmoothFunction,
    values: Vec<f64>,
    targets: Vec<f64>,
    best: f64,
    best_point: Vec<f64>,
    evaluations: usize,
}

impl<'a> State<'a> {
    fn new(cfg: &'a ThompsonConfig, target: &'a dyn SmoothFunction) -> Self {
        State {
            cfg,
            target,
            values: Vec::new(),
            targets: Vec::new(),
            best: f64::NEG_INFINITY,
            best_point: Vec::new(),
            evaluations: 0,
        }
    }

    fn n(&self) -> usize {
        self.targets.len()
    }

    fn observe(&mut self, points: &[Vec<f64>], round: usize) {
        let mut rng = stream(self.cfg.seed, Component::Noise, round as u64);
        let sd = self.cfg.observation_noise_var.sqrt();
        for p in points {
            let g = self.target.value(p);
            self.evaluations += 1;
            let e: f64 = StandardNormal.sample(&mut rng);
            self.values.extend_from_slice(p);
            self.targets.push(g + sd * e);
            if g > self.best {
                self.best = g;
                self.best_point = p.clone();
            }
        }
    }

    fn incumbent(&self) -> Vec<f64> {
        let i = self
            .targets
            .iter()
            .enumerate()
            .fold(0, |b, (i, &y)| if y > self.targets[b] { i } else { b });
        self.values[i * self.cfg.dim..(i + 1) * self.cfg.dim].to_vec()
    }

    fn record(&self, round: usize, clock: &Instant) -> RoundRecord {
        RoundRecord {
            round,
            n_observations: self.n(),
            best_value: self.best,
            seconds: clock.elapsed().as_secs_f64(),
        }
    }

    fn finish(self, records: Vec<RoundRecord>) -> ThompsonTrace {
        ThompsonTrace {
            records,
            evaluations: self.evaluations,
            best_point: self.best_point,
        }
    }
}

fn uniform_points(dim: usize, count: usize, seed: u64, component: Component, index: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, component, index);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}

fn initial_points(cfg: &ThompsonConfig) -> Vec<Vec<f64>> {
    uniform_points(cfg.dim, cfg.init_points, cfg.seed, Component::Inputs, 0)
}

/// One round of acquisitions against the current training set.
pub fn acquire_batch(
    inputs: &InputMatrix,
    targets: &DVector<f64>,
    incumbent: &[f64],
    cfg: &ThompsonConfig,
    round: usize,
) -> Result<Vec<Vec<f64>>> {
    let op = Arc::new(KernelOperator::new(cfg.kernel(), inputs.clone())?.with_row_cache(cfg.row_cache));
    let sampler = PathwiseSampler::new(op.clone(), targets, cfg.sample_options(round))?;
    let first = (round * cfg.acquisition_batch) as u64;
    let samples = sampler.draw_range(cfg.seed, first..first + cfg.acquisition_batch as u64)?;
    let m = &cfg.maximiser;
    let eta = m.step_size(cfg.length_scale, cfg.dim);
    let screened = if m.candidates > 0 {
        let cands = uniform_points(cfg.dim, m.candidates, cfg.seed, Component::Starts, first);
        let flat: Vec<f64> = cands.iter().flatten().copied().collect();
        let scores = evaluate_samples(&samples, &op, &InputMatrix::dense(m.candidates, cfg.dim, flat)?)?;
        Some((cands, scores))
    } else {
        None
    };
    samples
        .par_iter()
        .enumerate()
        .map(|(s, sample)| {
            let f = SampleFunction::new(sample, &op)?;
            let mut starts = match &screened {
                Some((cands, scores)) => {
                    let mut order: Vec<usize> = (0..cands.len()).collect();
                    order.sort_by(|&a, &b| scores[(s, b)].total_cmp(&scores[(s, a)]));
                    order.iter().take(m.num_starts).map(|&i| cands[i].clone()).collect()
                }
                None => uniform_points(cfg.dim, m.num_starts, cfg.seed, Component::Starts, first + s as u64),
            };
            starts.push(incumbent.to_vec());
            Ok(maximise(&f, &starts, m.grad_steps, eta).0)
        })
        .collect()
}

/// Thompson sampling against the synthetic target of `cfg`.
pub fn run(cfg: &ThompsonConfig) -> Result<ThompsonTrace> {
    let target = cfg.target()?;
    run_with_target(cfg, &target)
}

/// Thompson sampling against an arbitrary target.
pub fn run_with_target(cfg: &ThompsonConfig, target: &dyn SmoothFunction) -> Result<ThompsonTrace> {
    cfg.validate()?;
    if target.dim() != cfg.dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.dim,
            found: target.dim(),
        });
    }
    let clock = Instant::now();
    let mut state = State::new(cfg, target);
    state.observe(&initial_points(cfg), 0);
    let mut records = vec![state.record(0, &clock)];
    for round in 1..=cfg.rounds {
        let inputs = InputMatrix::dense(state.n(), cfg.dim, state.values.clone())?;
        let targets = DVector::from_column_slice(&state.targets);
        let points = acquire_batch(&inputs, &targets, &state.incumbent(), cfg, round)?;
        state.observe(&points, round);
        records.push(state.record(round, &clock));
    }
    Ok(state.finish(records))
}

/// The control: the same initial data followed by uniform random
/// acquisitions at the same budget.
pub fn run_random(cfg: &ThompsonConfig) -> Result<ThompsonTrace> {
    cfg.validate()?;
    let target = cfg.target()?;
    let clock = Instant::now();
    let mut state = State::new(cfg, &target);
    state.observe(&initial_points(cfg), 0);
    let mut records = vec![state.record(0, &clock)];
    for round in 1..=cfg.rounds {
        let points = uniform_points(
            cfg.dim,
            cfg.acquisition_batch,
            cfg.seed,
            Component::Inputs,
            round as u64,
        );
        state.observe(&points, round);
        records.push(state.record(round, &clock));
    }
    Ok(state.finish(records))
}
