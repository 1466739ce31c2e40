#ifndef SUBNEWTON_H
#define SUBNEWTON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SnStatus {
  SN_STATUS_OK = 0,
  SN_STATUS_NULL_POINTER = 1,
  SN_STATUS_INVALID_ARGUMENT = 2,
  SN_STATUS_IO = 3,
  SN_STATUS_PARSE = 4,
  /**
   * Non-finite values, CG breakdown, SGI divergence or a failed eigensolve.
   */
  SN_STATUS_NUMERICAL = 5,
  /**
   * Line search exhaustion, non-descent direction or no convergence.
   */
  SN_STATUS_CONVERGENCE = 6,
  SN_STATUS_PANIC = 7,
} SnStatus;

typedef enum SnMethod {
  SN_METHOD_GD = 0,
  SN_METHOD_NEWTON = 1,
  SN_METHOD_SUBSAMPLED_NEWTON = 2,
  SN_METHOD_NEWTON_CG = 3,
  SN_METHOD_NEWTON_SGI = 4,
} SnMethod;

typedef enum SnStep {
  SN_STEP_ARMIJO = 0,
  SN_STEP_UNIT = 1,
  SN_STEP_FIXED = 2,
} SnStep;

typedef enum SnRunStatus {
  SN_RUN_STATUS_MAX_ITERS = 0,
  SN_RUN_STATUS_EFFECTIVE_GRAD_BUDGET = 1,
  SN_RUN_STATUS_TARGET_REACHED = 2,
  SN_RUN_STATUS_CONVERGED = 3,
  SN_RUN_STATUS_STALLED = 4,
  SN_RUN_STATUS_FAILED = 5,
} SnRunStatus;

typedef struct SnDataset SnDataset;

typedef struct SnObjective SnObjective;

typedef struct SnRunRecord SnRunRecord;

/**
 * Optimizer settings. A `grad_sample` of 0 means full gradients, otherwise
 * it is the initial size of a sample growing by `grad_growth` per
 * iteration. A `hess_sample` of 0 means 5% of the examples. A `cg_fixed_r`
 * above 0 selects fixed-step CG instead of the residual test. An
 * `sgi_iterations` of 0 matches the work of `cg_max_iters` CG steps.
 */
typedef struct SnMethodConfig {
  enum SnMethod method;
  size_t grad_sample;
  double grad_growth;
  size_t hess_sample;
  double cg_zeta;
  size_t cg_max_iters;
  size_t cg_fixed_r;
  size_t sgi_iterations;
  double sgi_alpha;
  enum SnStep step;
  double fixed_alpha;
} SnMethodConfig;

/**
 * Stopping rule. A `target_train_error` or `max_effective_grads` of 0 or
 * less is ignored.
 */
typedef struct SnBudget {
  size_t max_iters;
  double max_effective_grads;
  double target_train_error;
} SnBudget;

typedef struct SnIterEntry {
  size_t k;
  double train_error;
  double distance;
  uint64_t grad_evals;
  uint64_t hvp_evals;
  uint64_t func_evals;
  double effective_grad_evals;
  double step;
  size_t inner_iters;
  size_t grad_sample;
  size_t hess_sample;
} SnIterEntry;

typedef struct SnTheoryConstants {
  double mu;
  double l;
  double mu_beta;
  double l_beta;
  double mu_bar;
  double l_bar;
  double v;
  double sigma;
  double m;
  double gamma;
  size_t beta;
  size_t n;
  size_t d;
} SnTheoryConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *sn_last_error_message(void);

void sn_clear_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *sn_version(void);

/**
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum SnStatus sn_dataset_load_libsvm(const char *path, struct SnDataset **out);

/**
 * Gaussian features with logistic labels.
 *
 * # Safety
 * `out` must be writable.
 */
enum SnStatus sn_dataset_synthesize(size_t n, size_t d, uint64_t seed, struct SnDataset **out);

/**
 * Dense row-major features (`rows * cols` values) and `rows` labels in
 * {-1, 0, +1}; 0 is read as -1.
 *
 * # Safety
 * The arrays must hold the stated number of elements; `out` must be writable.
 */
enum SnStatus sn_dataset_from_dense(const double *features,
                                    const double *labels,
                                    size_t rows,
                                    size_t cols,
                                    struct SnDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library, not yet freed.
 */
void sn_dataset_free(struct SnDataset *ds);

/**
 * Number of examples, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t sn_dataset_rows(const struct SnDataset *ds);

/**
 * Feature dimension, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t sn_dataset_cols(const struct SnDataset *ds);

/**
 * Regularized logistic loss over `ds`. A negative `lambda` selects
 * `1 / rows`. The dataset handle may be freed afterwards.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum SnStatus sn_objective_new(const struct SnDataset *ds, double lambda, struct SnObjective **out);

/**
 * # Safety
 * `obj` must be null or a live handle.
 */
void sn_objective_free(struct SnObjective *obj);

/**
 * # Safety
 * `obj` must be a live handle.
 */
size_t sn_objective_dim(const struct SnObjective *obj);

/**
 * # Safety
 * `obj` must be a live handle. `w` has `dim` entries; `out` is writable.
 */
enum SnStatus sn_objective_value(const struct SnObjective *obj, const double *w, double *out);

/**
 * Full gradient at `w`, written to `grad` (`dim` entries).
 *
 * # Safety
 * `obj` must be a live handle; both arrays hold `dim` entries.
 */
enum SnStatus sn_objective_gradient(const struct SnObjective *obj, const double *w, double *grad);

/**
 * Hessian-vector product over the examples in `sample` (`sample_len`
 * distinct indices), or over all examples when `sample` is null.
 *
 * # Safety
 * `obj` must be a live handle; `w`, `p`, `out` hold `dim` entries.
 */
enum SnStatus sn_objective_hessian_vector(const struct SnObjective *obj,
                                          const double *w,
                                          const double *p,
                                          const size_t *sample,
                                          size_t sample_len,
                                          double *out);

/**
 * Minimizer of the objective, written to `w_star` (`dim` entries), and the
 * minimum value to `f_star` when non-null. Cached on the handle.
 *
 * # Safety
 * `obj` must be a live handle; `w_star` holds `dim` entries.
 */
enum SnStatus sn_objective_minimize(struct SnObjective *obj, double *w_star, double *f_star);

/**
 * Defaults: Newton-CG on 5% of the data, residual test 0.01, at most 10 CG
 * steps, Armijo steps.
 */
struct SnMethodConfig sn_method_config_default(void);

/**
 * Run one optimizer from `w0` (`dim` entries). Method failures are
 * reported through the record status, not the return code.
 *
 * # Safety
 * `obj` must be a live handle; `config` and `budget` must be valid
 * pointers; `out` must be writable.
 */
enum SnStatus sn_run(struct SnObjective *obj,
                     const struct SnMethodConfig *config,
                     const struct SnBudget *budget,
                     const double *w0,
                     uint64_t seed,
                     struct SnRunRecord **out);

/**
 * # Safety
 * `rec` must be null or a live handle.
 */
void sn_run_record_free(struct SnRunRecord *rec);

/**
 * Number of recorded entries (iterations plus the initial point).
 *
 * # Safety
 * `rec` must be null or a live handle.
 */
size_t sn_run_record_len(const struct SnRunRecord *rec);

/**
 * # Safety
 * `rec` must be a live handle; `out` must be writable.
 */
enum SnStatus sn_run_record_entry(const struct SnRunRecord *rec,
                                  size_t index,
                                  struct SnIterEntry *out);

/**
 * Why the run stopped. For [`SnRunStatus::Failed`] the cause is also set
 * as the last error message.
 *
 * # Safety
 * `rec` must be a live handle.
 */
enum SnRunStatus sn_run_record_status(const struct SnRunRecord *rec);

/**
 * `2 ((sqrt(kappa) - 1) / (sqrt(kappa) + 1))^r`.
 */
double sn_cg_worst_case_bound(double kappa, size_t r);

/**
 * Hessian sample size for the halving guarantee; `clamped` (when non-null)
 * reports whether it was capped at `n`.
 *
 * # Safety
 * `tc` must be valid; `beta` writable; `clamped` null or writable.
 */
enum SnStatus sn_required_hessian_sample(const struct SnTheoryConstants *tc,
                                         size_t *beta,
                                         bool *clamped);

/**
 * CG steps per iteration for the halving guarantee, at most `tc.d`; 0 for
 * a null pointer.
 *
 * # Safety
 * `tc` must be null or valid.
 */
size_t sn_required_cg_iters(const struct SnTheoryConstants *tc);

/**
 * Largest residual-test tolerance covered by the analysis; NaN for null.
 *
 * # Safety
 * `tc` must be null or valid.
 */
double sn_zeta_bound(const struct SnTheoryConstants *tc);

/**
 * Linear-rate constants: `c`, `rho_hat` and the fixed step `alpha`.
 *
 * # Safety
 * `tc` must be valid; the outputs writable.
 */
enum SnStatus sn_linear_constants(const struct SnTheoryConstants *tc,
                                  double eta,
                                  double f_gap0,
                                  double *c,
                                  double *rho_hat,
                                  double *alpha);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBNEWTON_H */
