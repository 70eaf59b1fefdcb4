#ifndef LSR_H
#define LSR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsrStatus {
  LSR_STATUS_OK = 0,
  LSR_STATUS_NULL_POINTER = 1,
  /*
   Invalid argument or configuration.
   */
  LSR_STATUS_INVALID_ARGUMENT = 2,
  /*
   The data cannot support the requested computation.
   */
  LSR_STATUS_DATA = 3,
  LSR_STATUS_NUMERICAL = 4,
  /*
   An internal panic was caught.
   */
  LSR_STATUS_INTERNAL = 5,
} LsrStatus;

typedef enum LsrEstimator {
  LSR_ESTIMATOR_SINGLE = 0,
  LSR_ESTIMATOR_AVERAGE = 1,
  LSR_ESTIMATOR_TRIM = 2,
  LSR_ESTIMATOR_ROD = 3,
  LSR_ESTIMATOR_ROE = 4,
  LSR_ESTIMATOR_ROE_MULTI = 5,
  LSR_ESTIMATOR_ORACLE = 6,
} LsrEstimator;

typedef enum LsrRule {
  LSR_RULE_MWV = 0,
  LSR_RULE_TRUNCATED = 1,
  LSR_RULE_TRIMMED = 2,
  LSR_RULE_MEDIAN_OF_MEANS = 3,
} LsrRule;

/*
 Result of [`lsr_estimate`].
 */
typedef struct LsrEstimate LsrEstimate;

/*
 Sources, target and kernel bandwidth for one estimation problem.
 */
typedef struct LsrProblem LsrProblem;

/*
 Estimation options; obtain defaults from [`lsr_options_default`].
 `estimator` and `rule` hold [`LsrEstimator`] and [`LsrRule`] values.
 */
typedef struct LsrOptions {
  uint32_t estimator;
  uint32_t rule;
  double eps_h;
  size_t mom_groups;
  size_t max_iters;
  double tol;
  size_t refine_steps;
  size_t restarts;
  uint64_t seed;
  /*
   Source used by the single estimator.
   */
  size_t single_source;
} LsrOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call into this library on the
 same thread.
 */
const char *lsr_last_error_message(void);

struct LsrOptions lsr_options_default(void);

/*
 Creates an empty problem with `num_classes` classes and covariate
 dimension `dim`; the bandwidth starts at 1. Returns null on invalid
 sizes.
 */
struct LsrProblem *lsr_problem_new(size_t num_classes, size_t dim);

/*
 # Safety
 `problem` must come from [`lsr_problem_new`] and not be used afterwards.
 */
void lsr_problem_free(struct LsrProblem *problem);

/*
 Appends a labeled source: `covariates` is row-major `n_rows x dim`,
 `labels` holds `n_rows` classes in `1..=num_classes`.

 # Safety
 Pointers must reference arrays of the stated lengths.
 */
enum LsrStatus lsr_problem_add_source(struct LsrProblem *problem,
                                      const double *covariates,
                                      const uint32_t *labels,
                                      size_t n_rows);

/*
 Sets (or replaces) the unlabeled target sample, row-major
 `n_rows x dim`.

 # Safety
 `covariates` must reference `n_rows * dim` values.
 */
enum LsrStatus lsr_problem_set_target(struct LsrProblem *problem,
                                      const double *covariates,
                                      size_t n_rows);

/*
 # Safety
 `problem` must be a live handle.
 */
enum LsrStatus lsr_problem_set_bandwidth(struct LsrProblem *problem, double bandwidth);

/*
 Sets the inlier sources (0-based) used by the oracle estimator.

 # Safety
 `indices` must reference `len` values.
 */
enum LsrStatus lsr_problem_set_inliers(struct LsrProblem *problem,
                                       const size_t *indices,
                                       size_t len);

/*
 # Safety
 `problem` must be a live handle.
 */
size_t lsr_problem_num_sources(const struct LsrProblem *problem);

/*
 Fits the kernel terms and runs the chosen estimator. On success `*out`
 receives a new estimate handle.

 # Safety
 `problem` and `options` must be valid; `out` must be writable.
 */
enum LsrStatus lsr_estimate(const struct LsrProblem *problem,
                            const struct LsrOptions *options,
                            struct LsrEstimate **out);

/*
 # Safety
 `estimate` must come from [`lsr_estimate`] and not be used afterwards.
 */
void lsr_estimate_free(struct LsrEstimate *estimate);

/*
 # Safety
 `estimate` must be a live handle.
 */
size_t lsr_estimate_num_classes(const struct LsrEstimate *estimate);

/*
 # Safety
 `estimate` must be a live handle.
 */
size_t lsr_estimate_num_sources(const struct LsrEstimate *estimate);

/*
 # Safety
 `estimate` must be a live handle.
 */
size_t lsr_estimate_iterations(const struct LsrEstimate *estimate);

/*
 Robust objective at the estimate; NaN for a null handle.

 # Safety
 `estimate` must be a live handle.
 */
double lsr_estimate_objective(const struct LsrEstimate *estimate);

/*
 Copies the estimated proportions into `out` (length `num_classes`).

 # Safety
 `out` must reference `len` writable values.
 */
enum LsrStatus lsr_estimate_q_hat(const struct LsrEstimate *estimate, double *out, size_t len);

/*
 Copies the source weights into `out` (length `num_sources`).

 # Safety
 `out` must reference `len` writable values.
 */
enum LsrStatus lsr_estimate_weights(const struct LsrEstimate *estimate, double *out, size_t len);

/*
 Euclidean projection of `v` onto the probability simplex.

 # Safety
 `v` and `out` must reference `len` values each.
 */
enum LsrStatus lsr_project_simplex(const double *v, size_t len, double *out);

/*
 Minimum-variance weights over `values` with budget `eps_h`.

 # Safety
 `values` and `out` must reference `len` values each.
 */
enum LsrStatus lsr_mwv_weights(const double *values, size_t len, double eps_h, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSR_H */
