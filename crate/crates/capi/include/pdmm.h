#ifndef PDMM_H
#define PDMM_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from pdmm-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PdmmSampler {
  PDMM_SAMPLER_UNIFORM = 0,
  PDMM_SAMPLER_CYCLIC = 1,
} PdmmSampler;

// Status codes returned by every fallible entry point.
typedef enum PdmmStatus {
  PDMM_STATUS_OK = 0,
  PDMM_STATUS_NULL_ARGUMENT = 1,
  PDMM_STATUS_INVALID_CONFIG = 2,
  PDMM_STATUS_VALIDATION_FAILED = 3,
  PDMM_STATUS_NUMERICAL_FAILURE = 4,
  PDMM_STATUS_DIVERGED = 5,
  PDMM_STATUS_IO_ERROR = 6,
  // An internal invariant was violated; the error message has details.
  PDMM_STATUS_INTERNAL = 7,
} PdmmStatus;

typedef enum PdmmStop {
  // Relative x/y change below `tol`.
  PDMM_STOP_XY_CHANGE = 0,
  // Constraint residual norm below `tol`.
  PDMM_STOP_PRIMAL_RESIDUAL = 1,
} PdmmStop;

// Solver variant selector for [`PdmmOptions`].
typedef enum PdmmVariant {
  // Canonical table-driven step sizes.
  PDMM_VARIANT_PDMM = 0,
  // Splitting-ADMM equivalents (all blocks, τ = 1/J).
  PDMM_VARIANT_SADMM = 1,
  // Proximal Jacobian (all blocks, τ = 1, derived proximal weights).
  PDMM_VARIANT_PJADMM = 2,
  // Randomized dual updates (`k_dual` rows per iteration).
  PDMM_VARIANT_RDBCD = 3,
} PdmmVariant;

// Opaque problem handle.
typedef struct PdmmProblem PdmmProblem;

// Opaque result handle.
typedef struct PdmmResult PdmmResult;

// Plain-old-data solve options; obtain defaults from
// [`pdmm_options_default`] and adjust fields as needed.
typedef struct PdmmOptions {
  enum PdmmVariant variant;
  // Primal blocks per iteration; 0 selects all blocks.
  size_t k;
  // Dual rows per iteration (rdbcd); 0 selects all rows.
  size_t k_dual;
  double rho;
  enum PdmmSampler sampler;
  enum PdmmStop stop;
  double tol;
  size_t max_iter;
  uint64_t seed;
  // Worker threads for block updates; 0 defers to `PDMM_THREADS`.
  size_t threads;
} PdmmOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Default options: canonical variant over all blocks, ρ = 1, the relative
// change rule at 1e-4, at most 10000 iterations.
struct PdmmOptions pdmm_options_default(void);

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call from the same thread.
const char *pdmm_last_error_message(void);

// Builds a synthetic noise + sparse + low-rank decomposition problem.
// Pass `gamma2 <= 0` or `gamma3 <= 0` to use the data-driven defaults.
//
// # Safety
// `out` must be a valid pointer to a `PdmmProblem*` slot.
enum PdmmStatus pdmm_problem_rpca_synthetic(size_t m,
                                            size_t n,
                                            size_t rank,
                                            uint64_t seed,
                                            double gamma2,
                                            double gamma3,
                                            struct PdmmProblem **out);

// Builds the decomposition problem for caller-provided data
// (`observed` holds `m·n` entries in row-major order).
//
// # Safety
// `observed` must point to `m·n` readable doubles; `out` must be a valid
// slot.
enum PdmmStatus pdmm_problem_rpca_from_data(size_t m,
                                            size_t n,
                                            const double *observed,
                                            double gamma2,
                                            double gamma3,
                                            struct PdmmProblem **out);

// Builds a synthetic overlapping group lasso problem (chain-structured
// groups).
//
// # Safety
// `out` must be a valid pointer to a `PdmmProblem*` slot.
enum PdmmStatus pdmm_problem_group_lasso_synthetic(size_t m,
                                                   size_t groups,
                                                   size_t group_size,
                                                   size_t overlap,
                                                   uint64_t seed,
                                                   struct PdmmProblem **out);

// Builds a random structured quadratic test problem with a known solution.
//
// # Safety
// `out` must be a valid pointer to a `PdmmProblem*` slot.
enum PdmmStatus pdmm_problem_toy_qp(size_t row_blocks,
                                    size_t row_size,
                                    size_t col_blocks,
                                    size_t col_size,
                                    uint64_t seed,
                                    struct PdmmProblem **out);

// Loads a problem from a saved instance file (JSON schema
// `pdmm-instance-v1`).
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be a valid slot.
enum PdmmStatus pdmm_problem_from_file(const char *path, struct PdmmProblem **out);

// # Safety
// `problem` must come from a constructor of this library and not have been
// freed already.
void pdmm_problem_free(struct PdmmProblem *problem);

// Number of variable blocks.
//
// # Safety
// `problem` must be a live handle.
size_t pdmm_problem_num_blocks(const struct PdmmProblem *problem);

// Total primal dimension.
//
// # Safety
// `problem` must be a live handle.
size_t pdmm_problem_dim(const struct PdmmProblem *problem);

// Runs the configured solve. On success the caller owns `*out`.
//
// # Safety
// `problem` must be a live handle; `options` and `out` must be valid
// pointers.
enum PdmmStatus pdmm_solve(const struct PdmmProblem *problem,
                           const struct PdmmOptions *options,
                           struct PdmmResult **out);

// # Safety
// `result` must come from [`pdmm_solve`] and not have been freed already.
void pdmm_result_free(struct PdmmResult *result);

// # Safety
// `result` must be a live handle.
double pdmm_result_objective(const struct PdmmResult *result);

// # Safety
// `result` must be a live handle.
double pdmm_result_primal_residual(const struct PdmmResult *result);

// # Safety
// `result` must be a live handle.
size_t pdmm_result_iterations(const struct PdmmResult *result);

// 1 when the solve stopped on its tolerance, 0 on the iteration cap.
//
// # Safety
// `result` must be a live handle.
int32_t pdmm_result_converged(const struct PdmmResult *result);

// Length of the concatenated primal solution.
//
// # Safety
// `result` must be a live handle.
size_t pdmm_result_x_len(const struct PdmmResult *result);

// Copies the concatenated primal solution into `buf`.
//
// # Safety
// `buf` must point to at least `len` writable doubles; `result` must be a
// live handle.
enum PdmmStatus pdmm_result_copy_x(const struct PdmmResult *result, double *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDMM_H */
