#ifndef SDDGP_H
#define SDDGP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SddgpStatus {
  SDDGP_STATUS_OK = 0,
  SDDGP_STATUS_NULL_POINTER = 1,
  SDDGP_STATUS_INVALID_ARGUMENT = 2,
  SDDGP_STATUS_DIMENSION_MISMATCH = 3,
  SDDGP_STATUS_DIVERGED = 4,
  SDDGP_STATUS_FACTORISATION = 5,
  SDDGP_STATUS_PANIC = 6,
} SddgpStatus;

typedef enum SddgpKernel {
  SDDGP_KERNEL_MATERN32 = 0,
  SDDGP_KERNEL_SQUARED_EXPONENTIAL = 1,
} SddgpKernel;

/**
 * Opaque problem handle.
 */
typedef struct SddgpProblem SddgpProblem;

/**
 * Stochastic dual descent parameters. Fill with
 * [`sddgp_sdd_params_default`] before changing individual fields.
 */
typedef struct SddgpSddParams {
  size_t steps;
  size_t batch_size;
  /**
   * βn; the step size is βn / n.
   */
  double step_size_times_n;
  double momentum;
  /**
   * Geometric averaging weight; zero or negative selects 100 / steps.
   */
  double averaging_r;
  uint64_t seed;
} SddgpSddParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a problem from `n` row-major inputs of dimension `dim` and `n`
 * targets. The targets are centred at `prior_mean` internally.
 *
 * # Safety
 * `x` must point to `n * dim` doubles, `y` to `n` doubles and `out` to
 * writable storage for one handle pointer.
 */
enum SddgpStatus sddgp_problem_new(enum SddgpKernel kernel,
                                   const double *x,
                                   size_t n,
                                   size_t dim,
                                   const double *y,
                                   double length_scale,
                                   double amplitude,
                                   double noise,
                                   double prior_mean,
                                   struct SddgpProblem **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `p` must be null or a handle from [`sddgp_problem_new`] not yet freed.
 */
void sddgp_problem_free(struct SddgpProblem *p);

/**
 * Number of training points, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t sddgp_problem_len(const struct SddgpProblem *p);

/**
 * Writes the default solver parameters.
 *
 * # Safety
 * `out` must be null or point to writable storage for one struct.
 */
enum SddgpStatus sddgp_sdd_params_default(struct SddgpSddParams *out);

/**
 * Solves `(K + λI) α = y − μ₀` by Cholesky factorisation.
 *
 * # Safety
 * `p` must be a live handle and `alpha` must point to `len` writable doubles.
 */
enum SddgpStatus sddgp_solve_direct(const struct SddgpProblem *p, double *alpha, size_t len);

/**
 * Preconditioned conjugate gradients to relative residual `tolerance`.
 * `preconditioner_rank` 0 disables the pivoted-Cholesky preconditioner.
 * Returns [`SddgpStatus::Ok`] also when `max_iters` is reached; the
 * iteration count is written to `iters` when it is not null.
 *
 * # Safety
 * `p` must be a live handle, `alpha` must point to `len` writable doubles
 * and `iters` must be null or writable.
 */
enum SddgpStatus sddgp_solve_cg(const struct SddgpProblem *p,
                                double tolerance,
                                size_t max_iters,
                                size_t preconditioner_rank,
                                double *alpha,
                                size_t len,
                                size_t *iters);

/**
 * Stochastic dual descent with random coordinates and geometric
 * averaging. On divergence the last iterate is still written and
 * [`SddgpStatus::Diverged`] is returned.
 *
 * # Safety
 * `p` must be a live handle, `params` must point to a valid struct,
 * `alpha` must point to `len` writable doubles and `steps` must be null or
 * writable.
 */
enum SddgpStatus sddgp_solve_sdd(const struct SddgpProblem *p,
                                 const struct SddgpSddParams *params,
                                 double *alpha,
                                 size_t len,
                                 size_t *steps);

/**
 * Posterior mean `μ₀ + k(x_test, X) α` at `t` row-major test inputs.
 *
 * # Safety
 * `p` must be a live handle, `alpha` must point to `len` doubles,
 * `x_test` to `t * dim` doubles and `out` to `t` writable doubles.
 */
enum SddgpStatus sddgp_predict_mean(const struct SddgpProblem *p,
                                    const double *alpha,
                                    size_t len,
                                    const double *x_test,
                                    size_t t,
                                    double *out);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *sddgp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sddgp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDDGP_H */
