//! C ABI for the `sddgp` solvers.
//!
//! A problem is created from row-major dense inputs and targets and owned
//! by the caller through an opaque [`SddgpProblem`] handle. Every fallible
//! function returns an [`SddgpStatus`]; on failure a message is available
//! from [`sddgp_last_error`] on the same thread. Panics never cross the
//! boundary and are reported as [`SddgpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;
use std::sync::Arc;

use nalgebra::DVector;
use sddgp::kernel::{InputMatrix, KernelFamily, KernelOperator, KernelSpec, LengthScale, Precision};
use sddgp::objective::{direct_solve, RegressionProblem};
use sddgp::posterior::mean_predict;
use sddgp::solver::{cg_solve, sdd_solve, Averaging, CgConfig, PivotedCholesky, Probes, SddConfig, Termination};
use sddgp::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SddgpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Diverged = 4,
    Factorisation = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SddgpKernel {
    Matern32 = 0,
    SquaredExponential = 1,
}

/// Stochastic dual descent parameters. Fill with
/// [`sddgp_sdd_params_default`] before changing individual fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SddgpSddParams {
    pub steps: usize,
    pub batch_size: usize,
    /// βn; the step size is βn / n.
    pub step_size_times_n: f64,
    pub momentum: f64,
    /// Geometric averaging weight; zero or negative selects 100 / steps.
    pub averaging_r: f64,
    pub seed: u64,
}

/// Opaque problem handle.
pub struct SddgpProblem {
    problem: RegressionProblem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> SddgpStatus {
    match e {
        Error::DimensionMismatch { .. } => SddgpStatus::DimensionMismatch,
        Error::Diverged { .. } => SddgpStatus::Diverged,
        Error::Factorisation(_) => SddgpStatus::Factorisation,
        _ => SddgpStatus::InvalidArgument,
    }
}

struct Fail(SddgpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SddgpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SddgpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SddgpStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(SddgpStatus::NullPointer, "null pointer argument".into())
}

unsafe fn input<'a>(ptr: *const f64, len: usize) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn handle<'a>(p: *const SddgpProblem) -> Result<&'a SddgpProblem, Fail> {
    p.as_ref().ok_or_else(null)
}

fn check_len(expected: usize, found: usize) -> Result<(), Fail> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found }.into());
    }
    Ok(())
}

fn write(out: &mut [f64], v: &DVector<f64>) {
    out.copy_from_slice(v.as_slice());
}

/// Builds a problem from `n` row-major inputs of dimension `dim` and `n`
/// targets. The targets are centred at `prior_mean` internally.
///
/// # Safety
/// `x` must point to `n * dim` doubles, `y` to `n` doubles and `out` to
/// writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn sddgp_problem_new(
    kernel: SddgpKernel,
    x: *const f64,
    n: usize,
    dim: usize,
    y: *const f64,
    length_scale: f64,
    amplitude: f64,
    noise: f64,
    prior_mean: f64,
    out: *mut *mut SddgpProblem,
) -> SddgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = std::ptr::null_mut();
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Fail(SddgpStatus::InvalidArgument, "n * dim overflows".into()))?;
        let xs = input(x, len)?.to_vec();
        let ys = input(y, n)?;
        let family = match kernel {
            SddgpKernel::Matern32 => KernelFamily::Matern32,
            SddgpKernel::SquaredExponential => KernelFamily::SquaredExponential,
        };
        let spec = KernelSpec {
            family,
            length_scale: LengthScale::Scalar(length_scale),
            amplitude,
            noise,
            prior_mean,
            precision: Precision::Double,
        };
        spec.validate()?;
        let op = KernelOperator::new(spec, InputMatrix::dense(n, dim, xs)?)?;
        let rhs = DVector::from_iterator(n, ys.iter().map(|v| v - prior_mean));
        let problem = RegressionProblem::from_operator(Arc::new(op), rhs)?;
        *out = Box::into_raw(Box::new(SddgpProblem { problem }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `p` must be null or a handle from [`sddgp_problem_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sddgp_problem_free(p: *mut SddgpProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of training points, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sddgp_problem_len(p: *const SddgpProblem) -> usize {
    p.as_ref().map_or(0, |p| p.problem.len())
}

/// Writes the default solver parameters.
///
/// # Safety
/// `out` must be null or point to writable storage for one struct.
#[no_mangle]
pub unsafe extern "C" fn sddgp_sdd_params_default(out: *mut SddgpSddParams) -> SddgpStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        let d = SddConfig::default();
        *out = SddgpSddParams {
            steps: d.steps,
            batch_size: d.batch_size,
            step_size_times_n: d.step_size_times_n,
            momentum: d.momentum,
            averaging_r: 0.0,
            seed: d.seed,
        };
        Ok(())
    })
}

/// Solves `(K + λI) α = y − μ₀` by Cholesky factorisation.
///
/// # Safety
/// `p` must be a live handle and `alpha` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sddgp_solve_direct(p: *const SddgpProblem, alpha: *mut f64, len: usize) -> SddgpStatus {
    guard(|| {
        let p = handle(p)?;
        check_len(p.problem.len(), len)?;
        let out = output(alpha, len)?;
        write(out, &direct_solve(&p.problem)?);
        Ok(())
    })
}

/// Preconditioned conjugate gradients to relative residual `tolerance`.
/// `preconditioner_rank` 0 disables the pivoted-Cholesky preconditioner.
/// Returns [`SddgpStatus::Ok`] also when `max_iters` is reached; the
/// iteration count is written to `iters` when it is not null.
///
/// # Safety
/// `p` must be a live handle, `alpha` must point to `len` writable doubles
/// and `iters` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sddgp_solve_cg(
    p: *const SddgpProblem,
    tolerance: f64,
    max_iters: usize,
    preconditioner_rank: usize,
    alpha: *mut f64,
    len: usize,
    iters: *mut usize,
) -> SddgpStatus {
    guard(|| {
        let p = handle(p)?;
        check_len(p.problem.len(), len)?;
        let out = output(alpha, len)?;
        let cfg = CgConfig {
            tolerance,
            max_iters,
            preconditioner_rank: (preconditioner_rank > 0).then_some(preconditioner_rank),
            snapshot_every: 0,
        };
        cfg.validate()?;
        let pre = match cfg.preconditioner_rank {
            Some(r) => Some(PivotedCholesky::new(p.problem.operator(), r.min(len))?),
            None => None,
        };
        let report = cg_solve(&p.problem, &cfg, pre.as_ref(), &Probes::none())?;
        write(out, &report.coefficients);
        if let Some(i) = iters.as_mut() {
            *i = report.steps;
        }
        Ok(())
    })
}

/// Stochastic dual descent with random coordinates and geometric
/// averaging. On divergence the last iterate is still written and
/// [`SddgpStatus::Diverged`] is returned.
///
/// # Safety
/// `p` must be a live handle, `params` must point to a valid struct,
/// `alpha` must point to `len` writable doubles and `steps` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sddgp_solve_sdd(
    p: *const SddgpProblem,
    params: *const SddgpSddParams,
    alpha: *mut f64,
    len: usize,
    steps: *mut usize,
) -> SddgpStatus {
    guard(|| {
        let p = handle(p)?;
        let params = params.as_ref().ok_or_else(null)?;
        check_len(p.problem.len(), len)?;
        let out = output(alpha, len)?;
        let cfg = SddConfig {
            steps: params.steps,
            batch_size: params.batch_size,
            step_size_times_n: params.step_size_times_n,
            momentum: params.momentum,
            averaging: Averaging::Geometric {
                r: (params.averaging_r > 0.0).then_some(params.averaging_r),
            },
            seed: params.seed,
            snapshot_every: 0,
            ..SddConfig::default()
        };
        let report = sdd_solve(&p.problem, &cfg, &Probes::none())?;
        write(out, &report.coefficients);
        if let Some(s) = steps.as_mut() {
            *s = report.steps;
        }
        if report.termination == Termination::Diverged {
            return Err(Error::Diverged { step: report.steps }.into());
        }
        Ok(())
    })
}

/// Posterior mean `μ₀ + k(x_test, X) α` at `t` row-major test inputs.
///
/// # Safety
/// `p` must be a live handle, `alpha` must point to `len` doubles,
/// `x_test` to `t * dim` doubles and `out` to `t` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sddgp_predict_mean(
    p: *const SddgpProblem,
    alpha: *const f64,
    len: usize,
    x_test: *const f64,
    t: usize,
    out: *mut f64,
) -> SddgpStatus {
    guard(|| {
        let p = handle(p)?;
        check_len(p.problem.len(), len)?;
        let coeff = DVector::from_column_slice(input(alpha, len)?);
        let op = p.problem.operator();
        let dim = op.inputs().dim().unwrap_or(0);
        let len_x = t
            .checked_mul(dim)
            .ok_or_else(|| Fail(SddgpStatus::InvalidArgument, "t * dim overflows".into()))?;
        let xs = input(x_test, len_x)?.to_vec();
        let dest = output(out, t)?;
        let pred = mean_predict(&coeff, op, &InputMatrix::dense(t, dim, xs)?)?;
        write(dest, &pred);
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sddgp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sddgp_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version contains a NUL byte"),
    };
    VERSION.as_ptr()
}
