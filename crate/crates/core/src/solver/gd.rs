use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{diverged, Probes, Recorder, SolveReport, Termination};
use crate::error::{Error, Result};
use crate::objective::{dual_grad_from_product, RegressionProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Primal,
    Dual,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Primal => "primal",
            Objective::Dual => "dual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdConfig {
    pub objective: Objective,
    pub step_size_times_n: f64,
    pub steps: usize,
    pub momentum: f64,
    pub snapshot_every: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            objective: Objective::Dual,
            step_size_times_n: 1.0,
            steps: 1_000,
            momentum: 0.0,
            snapshot_every: 100,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be positive"));
        }
        if !(self.step_size_times_n > 0.0 && self.step_size_times_n.is_finite()) {
            return Err(Error::config("step_size_times_n must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Full-batch gradient descent on the primal or dual objective, with
/// optional Nesterov momentum (`ρ = 0` is plain gradient descent). Returns
/// the last iterate.
pub fn gd_solve(p: &RegressionProblem, cfg: &GdConfig, probes: &Probes) -> Result<SolveReport> {
    cfg.validate()?;
    let n = p.len();
    let beta = cfg.step_size_times_n / n.max(1) as f64;
    let rho = cfg.momentum;
    let rhs_norm = p.rhs().norm();
    let op = p.operator();
    let mut alpha = DVector::zeros(n);
    let mut velocity: DVector<f64> = DVector::zeros(n);
    let mut theta = DVector::zeros(n);
    let mut recorder = Recorder::new(probes, cfg.snapshot_every);
    let mut termination = Termination::Completed;
    let mut steps = 0;

    for t in 1..=cfg.steps {
        for ((o, a), v) in theta.iter_mut().zip(alpha.iter()).zip(velocity.iter()) {
            *o = a + rho * v;
        }
        let k_theta = op.matvec(&theta)?;
        let mut g = dual_grad_from_product(p, &theta, &k_theta);
        if cfg.objective == Objective::Primal {
            g = op.matvec(&g)?;
        }
        velocity.zip_apply(&g, |v, gi| *v = rho * *v - beta * gi);
        alpha += &velocity;
        steps = t;
        if diverged(&alpha, rhs_norm) {
            termination = Termination::Diverged;
            recorder.record(p, &alpha, t)?;
            break;
        }
        if recorder.due(t) {
            recorder.record(p, &alpha, t)?;
        }
    }
    if termination == Termination::Completed {
        recorder.record(p, &alpha, cfg.steps)?;
    }
    Ok(SolveReport {
        coefficients: alpha,
        trace: recorder.trace,
        termination,
        steps,
    })
}
