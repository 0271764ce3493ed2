use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{diverged, Averager, Averaging, Probes, Recorder, SolveReport, Termination};
use crate::error::{Error, Result};
use crate::estimator::{
    draw_batch, rb_rc_estimate, rc_batch, rf_estimate, sample_rff_with, sgd_mixed_estimate, BatchSampling, Regulariser,
    DEFAULT_CLIP_NORM, DEFAULT_REGULARISER_FEATURES,
};
use crate::kernel::KernelOperator;
use crate::objective::RegressionProblem;
use crate::rng::{stream, Component};

/// Gradient estimator driving [`sdd_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorKind {
    /// Every term of the dual gradient subsampled on a coordinate batch.
    #[default]
    RandomCoordinates,
    /// Only the `Kα` term subsampled; `λα − b` exact.
    RaoBlackwellisedCoordinates,
    /// `B` fresh random Fourier features per step.
    RandomFeatures,
    /// The mixed primal estimator of the SGD baseline, with fresh
    /// regulariser features per step and clipping.
    MixedPrimal {
        #[serde(default = "default_regulariser_features")]
        num_features: usize,
        #[serde(default = "default_clip")]
        clip_norm: Option<f64>,
    },
}

fn default_regulariser_features() -> usize {
    DEFAULT_REGULARISER_FEATURES
}

fn default_clip() -> Option<f64> {
    Some(DEFAULT_CLIP_NORM)
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::RandomCoordinates => "random_coordinates",
            EstimatorKind::RaoBlackwellisedCoordinates => "rao_blackwellised_coordinates",
            EstimatorKind::RandomFeatures => "random_features",
            EstimatorKind::MixedPrimal { .. } => "mixed_primal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SddConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// `βn`; the step size is `β = βn / n`.
    pub step_size_times_n: f64,
    pub momentum: f64,
    pub averaging: Averaging,
    pub seed: u64,
    /// Trace cadence in steps; 0 records only the final state.
    pub snapshot_every: usize,
    pub estimator: EstimatorKind,
    pub sampling: BatchSampling,
}

impl Default for SddConfig {
    fn default() -> Self {
        SddConfig {
            steps: 100_000,
            batch_size: 512,
            step_size_times_n: 50.0,
            momentum: 0.9,
            averaging: Averaging::default(),
            seed: 0,
            snapshot_every: 1_000,
            estimator: EstimatorKind::default(),
            sampling: BatchSampling::default(),
        }
    }
}

impl SddConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::config(format!(
                "batch_size must lie in 1..={n}, got {}",
                self.batch_size
            )));
        }
        if self.sampling == BatchSampling::Full && self.batch_size != n {
            return Err(Error::config("full sampling requires batch_size = n"));
        }
        if !(self.step_size_times_n > 0.0 && self.step_size_times_n.is_finite()) {
            return Err(Error::config("step_size_times_n must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if let EstimatorKind::MixedPrimal {
            num_features,
            clip_norm,
        } = self.estimator
        {
            if num_features == 0 {
                return Err(Error::config("num_features must be positive"));
            }
            if clip_norm.is_some_and(|c| !(c > 0.0)) {
                return Err(Error::config("clip_norm must be positive"));
            }
        }
        self.averaging.validate()
    }
}

/// Iterates of stochastic dual descent, all starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub alpha: DVector<f64>,
    pub velocity: DVector<f64>,
    pub step: usize,
}

impl DualState {
    pub fn new(n: usize) -> Self {
        DualState {
            alpha: DVector::zeros(n),
            velocity: DVector::zeros(n),
            step: 0,
        }
    }

    /// The Nesterov lookahead `α + ρv`.
    pub fn lookahead(&self, rho: f64, out: &mut DVector<f64>) {
        for ((o, a), v) in out.iter_mut().zip(self.alpha.iter()).zip(self.velocity.iter()) {
            *o = a + rho * v;
        }
    }
}

/// Stochastic dual descent with Nesterov momentum and iterate averaging.
/// Returns the averaged iterate; divergence is reported through the
/// termination status rather than as an error.
pub fn sdd_solve(p: &RegressionProblem, cfg: &SddConfig, probes: &Probes) -> Result<SolveReport> {
    let n = p.len();
    cfg.validate(n)?;
    let uses_features = matches!(
        cfg.estimator,
        EstimatorKind::RandomFeatures | EstimatorKind::MixedPrimal { .. }
    );
    let dim = p.operator().inputs().dim();
    if uses_features && (dim.is_none() || !p.operator().spec().family.is_stationary()) {
        return Err(Error::UnsupportedFamily(p.operator().spec().family.name()));
    }
    let beta = cfg.step_size_times_n / n as f64;
    let rho = cfg.momentum;
    let rhs_norm = p.rhs().norm();
    let mut batch_rng = stream(cfg.seed, Component::Batch, 0);
    let mut feature_rng = stream(cfg.seed, Component::Features, 0);
    let mut state = DualState::new(n);
    let mut averager = Averager::new(cfg.averaging, cfg.steps, n)?;
    let mut recorder = Recorder::new(probes, cfg.snapshot_every);
    let mut theta = DVector::zeros(n);
    let mut termination = Termination::Completed;

    for t in 1..=cfg.steps {
        state.lookahead(rho, &mut theta);
        match cfg.estimator {
            EstimatorKind::RandomCoordinates => {
                let batch = draw_batch(&mut batch_rng, n, cfg.batch_size, cfg.sampling);
                let g = rc_batch(p, &theta, &batch)?;
                state.velocity *= rho;
                for (&i, &gi) in g.indices.iter().zip(&g.values) {
                    state.velocity[i] -= beta * gi;
                }
            }
            EstimatorKind::RaoBlackwellisedCoordinates => {
                let batch = draw_batch(&mut batch_rng, n, cfg.batch_size, cfg.sampling);
                let g = rb_rc_estimate(p, &theta, &batch)?;
                let dense = g.dense_part.as_ref().expect("dense part present");
                state.velocity.zip_apply(dense, |v, d| *v = rho * *v - beta * d);
                for (&i, &gi) in g.indices.iter().zip(&g.values) {
                    state.velocity[i] -= beta * gi;
                }
            }
            EstimatorKind::RandomFeatures => {
                let fmap = sample_rff_with(p.operator().spec(), dim.unwrap_or(0), cfg.batch_size, &mut feature_rng)?;
                let z = fmap.evaluate(p.operator().inputs())?;
                let all: Vec<usize> = (0..z.len()).collect();
                let g = rf_estimate(p, &theta, &z, &all)?;
                state.velocity.zip_apply(&g, |v, d| *v = rho * *v - beta * d);
            }
            EstimatorKind::MixedPrimal {
                num_features,
                clip_norm,
            } => {
                let batch = draw_batch(&mut batch_rng, n, cfg.batch_size, cfg.sampling);
                let fmap = sample_rff_with(p.operator().spec(), dim.unwrap_or(0), num_features, &mut feature_rng)?;
                let z = fmap.evaluate(p.operator().inputs())?;
                let g = sgd_mixed_estimate(p, &theta, &batch, Regulariser::Features(&z), clip_norm)?;
                state.velocity.zip_apply(&g, |v, d| *v = rho * *v - beta * d);
            }
        }
        state.alpha += &state.velocity;
        state.step = t;
        averager.update(t, &state.alpha);
        if diverged(&state.alpha, rhs_norm) {
            termination = Termination::Diverged;
            recorder.record(p, averager.average(), t)?;
            break;
        }
        if recorder.due(t) {
            recorder.record(p, averager.average(), t)?;
        }
    }
    if termination == Termination::Completed {
        recorder.record(p, averager.average(), cfg.steps)?;
    }
    Ok(SolveReport {
        coefficients: averager.into_average(),
        trace: recorder.trace,
        termination,
        steps: state.step,
    })
}

/// Random-coordinate SDD for several right-hand sides against one operator.
///
/// All systems see the same coordinate batches, so each sampled kernel row
/// is fetched once per step and applied to every system; the iterates of
/// different systems never interact. Each report carries one final trace
/// entry.
pub fn sdd_solve_batch(op: &KernelOperator, rhs: &[DVector<f64>], cfg: &SddConfig) -> Result<Vec<SolveReport>> {
    let n = op.len();
    let k = rhs.len();
    cfg.validate(n)?;
    if cfg.estimator != EstimatorKind::RandomCoordinates {
        return Err(Error::config(
            "batched solves support the random_coordinates estimator only",
        ));
    }
    if let Some(bad) = rhs.iter().find(|b| b.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let start = std::time::Instant::now();
    let beta = cfg.step_size_times_n / n as f64;
    let rho = cfg.momentum;
    let lambda = op.noise();
    let scale = n as f64 / cfg.batch_size as f64;
    let r = cfg.averaging.resolved_r(cfg.steps);
    // Row-major n × k layouts: entry (j, c) at j * k + c.
    let mut b = vec![0.0; n * k];
    for (c, col) in rhs.iter().enumerate() {
        for j in 0..n {
            b[j * k + c] = col[j];
        }
    }
    let thresholds: Vec<f64> = rhs
        .iter()
        .map(|col| super::DIVERGENCE_FACTOR * (1.0 + col.norm()))
        .collect();
    let mut alpha = vec![0.0; n * k];
    let mut velocity = vec![0.0; n * k];
    let mut average = vec![0.0; n * k];
    let mut theta = vec![0.0; n * k];
    let mut acc = vec![0.0; k];
    let mut live = vec![true; k];
    let mut outcome: Vec<Option<(usize, Vec<f64>)>> = vec![None; k];
    let mut batch_rng = stream(cfg.seed, Component::Batch, 0);
    let mut steps_run = 0;

    for t in 1..=cfg.steps {
        for ((o, a), v) in theta.iter_mut().zip(&alpha).zip(&velocity) {
            *o = a + rho * v;
        }
        velocity.iter_mut().for_each(|v| *v *= rho);
        let batch = draw_batch(&mut batch_rng, n, cfg.batch_size, cfg.sampling);
        for &i in &batch {
            let row = op.row_unchecked(i);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (j, &kij) in row.iter().enumerate() {
                let th = &theta[j * k..(j + 1) * k];
                for (a, x) in acc.iter_mut().zip(th) {
                    *a += kij * x;
                }
            }
            let vi = &mut velocity[i * k..(i + 1) * k];
            for c in 0..k {
                let g = scale * (acc[c] + lambda * theta[i * k + c] - b[i * k + c]);
                vi[c] -= beta * g;
            }
        }
        for (a, v) in alpha.iter_mut().zip(&velocity) {
            *a += v;
        }
        match cfg.averaging {
            Averaging::Geometric { .. } => {
                let r = r.unwrap_or(1.0);
                for (m, a) in average.iter_mut().zip(&alpha) {
                    *m = r * a + (1.0 - r) * *m;
                }
            }
            Averaging::ArithmeticTail { start } if t > start.max(1) => {
                let count = (t - start.max(1) + 1) as f64;
                for (m, a) in average.iter_mut().zip(&alpha) {
                    *m += (a - *m) / count;
                }
            }
            _ => average.copy_from_slice(&alpha),
        }
        steps_run = t;
        for c in 0..k {
            if !live[c] {
                continue;
            }
            let norm = (0..n).map(|j| alpha[j * k + c].powi(2)).sum::<f64>().sqrt();
            if !(norm <= thresholds[c]) {
                live[c] = false;
                outcome[c] = Some((t, (0..n).map(|j| average[j * k + c]).collect()));
                for j in 0..n {
                    alpha[j * k + c] = 0.0;
                    velocity[j * k + c] = 0.0;
                    average[j * k + c] = 0.0;
                }
            }
        }
        if !live.iter().any(|&l| l) {
            break;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok((0..k)
        .map(|c| {
            let (steps, coefficients, termination) = match outcome[c].take() {
                Some((step, coef)) => (step, coef, Termination::Diverged),
                None => (
                    steps_run,
                    (0..n).map(|j| average[j * k + c]).collect(),
                    Termination::Completed,
                ),
            };
            SolveReport {
                coefficients: DVector::from_vec(coefficients),
                trace: vec![super::TraceEntry {
                    step: steps,
                    seconds,
                    knorm_sq: None,
                    k2norm_sq: None,
                    rmse: None,
                    residual: None,
                }],
                termination,
                steps,
            }
        })
        .collect())
}
