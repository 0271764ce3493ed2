use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{Probes, Recorder, SolveReport, Termination};
use crate::error::{Error, Result};
use crate::kernel::KernelOperator;
use crate::objective::RegressionProblem;

pub const DEFAULT_CG_TOLERANCE: f64 = 0.01;
pub const DEFAULT_PRECONDITIONER_RANK: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgConfig {
    /// Stop once `‖(K + λI)α − b‖ / ‖b‖ ≤ tolerance`.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Rank of the pivoted Cholesky preconditioner; `None` runs plain CG.
    pub preconditioner_rank: Option<usize>,
    pub snapshot_every: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            tolerance: DEFAULT_CG_TOLERANCE,
            max_iters: 1_000,
            preconditioner_rank: Some(DEFAULT_PRECONDITIONER_RANK),
            snapshot_every: 1,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::config("tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be positive"));
        }
        Ok(())
    }
}

/// Greedy rank-`r` partial Cholesky factor `L` with `LLᵀ ≈ K`, applied as the
/// preconditioner `(LLᵀ + λI)⁻¹` through the Woodbury identity.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    factor: DMatrix<f64>,
    pivots: Vec<usize>,
    residual_traces: Vec<f64>,
    noise: f64,
    inner: Cholesky<f64, Dyn>,
}

impl PivotedCholesky {
    /// Stops early once every remaining diagonal residual is negligible, so
    /// the achieved rank may be below `rank`.
    pub fn new(op: &KernelOperator, rank: usize) -> Result<Self> {
        let n = op.len();
        if rank > n {
            return Err(Error::config(format!("preconditioner rank {rank} exceeds n = {n}")));
        }
        let mut diag: Vec<f64> = (0..n).map(|i| op.diag(i)).collect();
        let floor = 1e-12 * diag.iter().cloned().fold(0.0, f64::max);
        let mut factor = DMatrix::zeros(n, rank);
        let mut pivots = Vec::with_capacity(rank);
        let mut residual_traces = vec![diag.iter().sum::<f64>()];
        for k in 0..rank {
            let (p, &dp) = diag
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("nonempty");
            if dp <= floor {
                break;
            }
            let row = op.row_unchecked(p);
            let root = dp.sqrt();
            for i in 0..n {
                let mut v = row[i];
                for j in 0..k {
                    v -= factor[(i, j)] * factor[(p, j)];
                }
                factor[(i, k)] = v / root;
            }
            for i in 0..n {
                diag[i] = (diag[i] - factor[(i, k)].powi(2)).max(0.0);
            }
            diag[p] = 0.0;
            pivots.push(p);
            residual_traces.push(diag.iter().sum());
        }
        let factor = factor.columns(0, pivots.len()).into_owned();
        let noise = op.noise();
        let mut small = factor.transpose() * &factor;
        for i in 0..small.nrows() {
            small[(i, i)] += noise;
        }
        let inner = Cholesky::new(small).ok_or_else(|| Error::Factorisation("λI + LᵀL".into()))?;
        Ok(PivotedCholesky {
            factor,
            pivots,
            residual_traces,
            noise,
            inner,
        })
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// The `n × rank` factor `L`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    /// `trace(K − L_k L_kᵀ)` for `k = 0, …, rank`.
    pub fn residual_traces(&self) -> &[f64] {
        &self.residual_traces
    }

    /// `(LLᵀ + λI)⁻¹ z = (z − L(λI + LᵀL)⁻¹Lᵀz) / λ`.
    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return z / self.noise;
        }
        let w = self.inner.solve(&(self.factor.transpose() * z));
        (z - &self.factor * w) / self.noise
    }
}

fn shifted_product(op: &KernelOperator, v: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(op.matvec(v)? + v * op.noise())
}

/// Preconditioned conjugate gradients on `(K + λI)α = b`.
///
/// When the recursively updated residual first meets the tolerance the true
/// residual is recomputed; the solver only reports `tolerance_reached` if the
/// true residual also satisfies it, and restarts from it otherwise.
pub fn cg_solve(
    p: &RegressionProblem,
    cfg: &CgConfig,
    precond: Option<&PivotedCholesky>,
    probes: &Probes,
) -> Result<SolveReport> {
    cfg.validate()?;
    let n = p.len();
    if let Some(m) = precond {
        if m.factor.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: m.factor.nrows(),
            });
        }
    }
    let op = p.operator();
    let b = p.rhs();
    let bnorm = b.norm();
    let apply = |r: &DVector<f64>| match precond {
        Some(m) => m.apply(r),
        None => r.clone(),
    };
    let mut recorder = Recorder::new(probes, cfg.snapshot_every);
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        recorder.record(p, &x, 0)?;
        recorder.trace[0].residual = Some(0.0);
        return Ok(SolveReport {
            coefficients: x,
            trace: recorder.trace,
            termination: Termination::ToleranceReached,
            steps: 0,
        });
    }
    let mut r = b.clone();
    let mut z = apply(&r);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    let mut termination = Termination::Completed;
    let mut steps = 0;
    let mut last_rel = 1.0;

    for it in 1..=cfg.max_iters {
        let q = shifted_product(op, &d)?;
        let a = rz / d.dot(&q);
        x.axpy(a, &d, 1.0);
        r.axpy(-a, &q, 1.0);
        let mut rel = r.norm() / bnorm;
        steps = it;
        if !rel.is_finite() {
            termination = Termination::Diverged;
            last_rel = rel;
            break;
        }
        let mut restart = false;
        if rel <= cfg.tolerance {
            let true_r = b - shifted_product(op, &x)?;
            rel = true_r.norm() / bnorm;
            if rel <= cfg.tolerance {
                termination = Termination::ToleranceReached;
                last_rel = rel;
                break;
            }
            r = true_r;
            restart = true;
        }
        last_rel = rel;
        if recorder.due(it) {
            recorder.record(p, &x, it)?;
            if let Some(e) = recorder.trace.last_mut() {
                e.residual = Some(rel);
            }
        }
        z = apply(&r);
        let rz_new = r.dot(&z);
        if restart {
            d = z.clone();
        } else {
            d = &z + &d * (rz_new / rz);
        }
        rz = rz_new;
    }
    recorder.record(p, &x, steps)?;
    if let Some(e) = recorder.trace.last_mut() {
        e.residual = Some(last_rel);
    }
    Ok(SolveReport {
        coefficients: x,
        trace: recorder.trace,
        termination,
        steps,
    })
}
