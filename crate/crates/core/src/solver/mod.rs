//! Iterative solvers for `(K + λI) α = b`: stochastic dual descent,
//! full-batch gradient descent on either objective, and preconditioned
//! conjugate gradients.

mod averaging;
mod cg;
mod gd;
mod sdd;

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{InputMatrix, DEFAULT_GRAM_CAP};
use crate::objective::{k2_norm_sq, k_norm_sq, RegressionProblem};

pub use averaging::{averaging_update, Averager, Averaging};
pub use cg::{cg_solve, CgConfig, PivotedCholesky, DEFAULT_CG_TOLERANCE, DEFAULT_PRECONDITIONER_RANK};
pub use gd::{gd_solve, GdConfig, Objective};
pub use sdd::{sdd_solve, sdd_solve_batch, DualState, EstimatorKind, SddConfig};

/// Iterates are declared divergent once `‖α‖ > DIVERGENCE_FACTOR · (1 + ‖b‖)`.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

pub(crate) fn diverged(alpha: &DVector<f64>, rhs_norm: f64) -> bool {
    // Written so that NaN counts as divergence.
    !(alpha.norm() <= DIVERGENCE_FACTOR * (1.0 + rhs_norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Diverged,
    ToleranceReached,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Diverged => "diverged",
            Termination::ToleranceReached => "tolerance_reached",
        }
    }
}

/// One snapshot of solver progress. Errors are relative to the reference
/// solution: `‖ᾱ − α⋆‖²_K / ‖α⋆‖²_K` and likewise for `K²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub seconds: f64,
    pub knorm_sq: Option<f64>,
    pub k2norm_sq: Option<f64>,
    pub rmse: Option<f64>,
    /// Relative Euclidean residual, recorded by CG only.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub coefficients: DVector<f64>,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
    /// Iterations actually executed.
    pub steps: usize,
}

impl SolveReport {
    pub fn diverged(&self) -> bool {
        self.termination == Termination::Diverged
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.trace.last()
    }

    /// Trace as CSV with columns `step,seconds,knorm_sq,k2norm_sq,rmse,status`.
    /// Intermediate rows carry status `running`, the final row the
    /// termination status. Missing metrics are empty fields. With
    /// `with_seconds = false` the seconds column is left empty so the output
    /// is reproducible byte for byte.
    pub fn trace_csv(&self, with_seconds: bool) -> String {
        let mut out = String::from("step,seconds,knorm_sq,k2norm_sq,rmse,status\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for (k, e) in self.trace.iter().enumerate() {
            let status = if k + 1 == self.trace.len() {
                self.termination.name()
            } else {
                "running"
            };
            let secs = if with_seconds {
                format!("{:.6}", e.seconds)
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.step,
                secs,
                opt(e.knorm_sq),
                opt(e.k2norm_sq),
                opt(e.rmse),
                status
            );
        }
        out
    }
}

/// Optional metric hooks evaluated at snapshots.
#[derive(Debug, Clone, Default)]
pub struct Probes {
    reference: Option<Reference>,
    test: Option<TestSet>,
}

#[derive(Debug, Clone)]
struct Reference {
    alpha: DVector<f64>,
    knorm_sq: f64,
    k2norm_sq: f64,
}

#[derive(Debug, Clone)]
struct TestSet {
    cross: DMatrix<f64>,
    targets: DVector<f64>,
    offset: f64,
}

impl Probes {
    pub fn none() -> Self {
        Probes::default()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_none() && self.test.is_none()
    }

    /// Track the distance to a reference solution (usually `direct_solve`).
    pub fn with_reference(mut self, p: &RegressionProblem, alpha_star: DVector<f64>) -> Result<Self> {
        p.check_len(&alpha_star)?;
        let k_alpha = p.operator().matvec(&alpha_star)?;
        self.reference = Some(Reference {
            knorm_sq: alpha_star.dot(&k_alpha),
            k2norm_sq: k_alpha.norm_squared(),
            alpha: alpha_star,
        });
        Ok(self)
    }

    /// Track test RMSE of the mean prediction `μ₀ + k(a, X) ᾱ` against
    /// targets on the original (uncentred) scale.
    pub fn with_test(mut self, p: &RegressionProblem, inputs: &InputMatrix, targets: DVector<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                found: targets.len(),
            });
        }
        let op = p.operator();
        let cross = crate::kernel::gram(op.spec(), inputs, op.inputs(), DEFAULT_GRAM_CAP)?;
        self.test = Some(TestSet {
            cross,
            targets,
            offset: op.spec().prior_mean,
        });
        Ok(self)
    }

    pub(crate) fn snapshot(
        &self,
        p: &RegressionProblem,
        alpha: &DVector<f64>,
        step: usize,
        seconds: f64,
    ) -> Result<TraceEntry> {
        let mut entry = TraceEntry {
            step,
            seconds,
            knorm_sq: None,
            k2norm_sq: None,
            rmse: None,
            residual: None,
        };
        if let Some(r) = &self.reference {
            let diff = alpha - &r.alpha;
            let kd = p.operator().matvec(&diff)?;
            entry.knorm_sq = Some(diff.dot(&kd) / r.knorm_sq.max(f64::MIN_POSITIVE));
            entry.k2norm_sq = Some(kd.norm_squared() / r.k2norm_sq.max(f64::MIN_POSITIVE));
        }
        if let Some(t) = &self.test {
            let pred = &t.cross * alpha;
            let sq: f64 = pred
                .iter()
                .zip(t.targets.iter())
                .map(|(p, y)| (p + t.offset - y).powi(2))
                .sum();
            entry.rmse = Some((sq / t.targets.len().max(1) as f64).sqrt());
        }
        Ok(entry)
    }
}

/// Wall clock plus snapshot cadence shared by the iterative solvers.
pub(crate) struct Recorder<'a> {
    probes: &'a Probes,
    every: usize,
    start: Instant,
    pub trace: Vec<TraceEntry>,
}

impl<'a> Recorder<'a> {
    pub fn new(probes: &'a Probes, every: usize) -> Self {
        Recorder {
            probes,
            every,
            start: Instant::now(),
            trace: Vec::new(),
        }
    }

    pub fn seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn due(&self, step: usize) -> bool {
        self.every > 0 && step % self.every == 0
    }

    pub fn record(&mut self, p: &RegressionProblem, alpha: &DVector<f64>, step: usize) -> Result<()> {
        if self.trace.last().is_some_and(|e| e.step == step) {
            return Ok(());
        }
        let seconds = self.seconds();
        let entry = self.probes.snapshot(p, alpha, step, seconds)?;
        self.trace.push(entry);
        Ok(())
    }
}

/// Relative `K²`-norm distance between two coefficient vectors, a cheap
/// proxy for training-set prediction error.
pub fn relative_k2_error(p: &RegressionProblem, alpha: &DVector<f64>, reference: &DVector<f64>) -> Result<f64> {
    Ok(k2_norm_sq(p, &(alpha - reference))? / k2_norm_sq(p, reference)?.max(f64::MIN_POSITIVE))
}

/// Relative `K`-norm distance `‖α − α⋆‖²_K / ‖α⋆‖²_K`.
pub fn relative_k_error(p: &RegressionProblem, alpha: &DVector<f64>, reference: &DVector<f64>) -> Result<f64> {
    Ok(k_norm_sq(p, &(alpha - reference))? / k_norm_sq(p, reference)?.max(f64::MIN_POSITIVE))
}
