#ifndef GRIDSE_H
#define GRIDSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GridseInit {
  /**
   * DC start for plain solvers, flat start for robust ones.
   */
  GRIDSE_INIT_DEFAULT = 0,
  GRIDSE_INIT_DC = 1,
  GRIDSE_INIT_FLAT = 2,
} GridseInit;

typedef enum GridseProfile {
  GRIDSE_PROFILE_PAPER_LEGACY = 0,
  GRIDSE_PROFILE_FULL = 1,
} GridseProfile;

typedef enum GridseSolver {
  GRIDSE_SOLVER_FGD = 0,
  GRIDSE_SOLVER_AGD = 1,
  GRIDSE_SOLVER_RFGD = 2,
  GRIDSE_SOLVER_RAGD = 3,
  GRIDSE_SOLVER_GAUSS_NEWTON = 4,
} GridseSolver;

typedef enum GridseStatus {
  GRIDSE_STATUS_OK = 0,
  GRIDSE_STATUS_NULL_POINTER = 1,
  GRIDSE_STATUS_INVALID_ARGUMENT = 2,
  GRIDSE_STATUS_CASE = 3,
  GRIDSE_STATUS_MEASUREMENT = 4,
  GRIDSE_STATUS_DIVERGED = 5,
  GRIDSE_STATUS_UNOBSERVABLE = 6,
  GRIDSE_STATUS_SOLVER = 7,
  GRIDSE_STATUS_IO = 8,
  GRIDSE_STATUS_PANIC = 9,
} GridseStatus;

typedef enum GridseTermination {
  GRIDSE_TERMINATION_TOL_ITERATE = 0,
  GRIDSE_TERMINATION_TOL_OBJECTIVE = 1,
  GRIDSE_TERMINATION_MAX_ITERS = 2,
  GRIDSE_TERMINATION_FIRST_ORDER = 3,
  GRIDSE_TERMINATION_DIVERGED = 4,
} GridseTermination;

typedef struct GridseNetwork GridseNetwork;

typedef struct GridsePlan GridsePlan;

/**
 * Estimation settings. `step_size <= 0` selects the automatic rule;
 * `rho < 0` selects the default budget of twice `identify` over the plan
 * length.
 */
typedef struct GridseSolveOptions {
  enum GridseSolver solver;
  enum GridseInit init;
  double step_scale;
  double step_size;
  size_t max_iters;
  double tol_iterate;
  double tol_objective;
  double rho;
  /**
   * Meters to flag after a robust solve.
   */
  size_t identify;
  bool refine;
} GridseSolveOptions;

typedef struct GridseSolveSummary {
  size_t iterations;
  enum GridseTermination termination;
  double final_objective;
  /**
   * `‖Jᵀr‖_∞` at the returned estimate.
   */
  double first_order;
  double step_size;
  /**
   * Number of entries written to the `flagged` buffer.
   */
  size_t flagged;
} GridseSolveSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *gridse_last_error(void);

/**
 * Loads a MATPOWER `.m` or JSON case; the names `case14` and `case118`
 * resolve to the bundled cases when no such file exists.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GridseStatus gridse_network_load(const char *path, struct GridseNetwork **out);

/**
 * Parses case text; `json` selects the JSON format, MATPOWER otherwise.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GridseStatus gridse_network_parse(const char *source, bool json, struct GridseNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from this library that is not used again.
 */
void gridse_network_free(struct GridseNetwork *net);

/**
 * Bus count, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live network handle.
 */
size_t gridse_network_n_buses(const struct GridseNetwork *net);

/**
 * Internal index of the slack bus, or `SIZE_MAX` for a null handle.
 *
 * # Safety
 * `net` must be null or a live network handle.
 */
size_t gridse_network_slack(const struct GridseNetwork *net);

/**
 * Draws a true state with uniform magnitudes in `[0.95, 1.05]`, uniform
 * angles in `[−0.35π, 0.35π]` and the slack angle at 0.
 *
 * # Safety
 * `re` and `im` must each hold `n` writable doubles.
 */
enum GridseStatus gridse_sample_true_state(const struct GridseNetwork *net,
                                           uint64_t seed,
                                           double *re,
                                           double *im,
                                           size_t n);

/**
 * Builds a standard meter layout with readings generated from the state
 * (`re`, `im`) under the default noise levels scaled by `noise_scale`,
 * then normalizes it.
 *
 * # Safety
 * `re` and `im` must each hold `n` doubles and `out` must be valid.
 */
enum GridseStatus gridse_plan_generate(const struct GridseNetwork *net,
                                       enum GridseProfile profile,
                                       const double *re,
                                       const double *im,
                                       size_t n,
                                       double noise_scale,
                                       uint64_t seed,
                                       struct GridsePlan **out);

/**
 * Replaces `count` legacy readings by `factor` times their noise-free value
 * at the true state. The corrupted indices are written to `indices` (room
 * for `count` entries), ascending. Readings are rescaled to the plan's
 * normalization.
 *
 * # Safety
 * `re`/`im` must hold `n` doubles, `indices` `count` writable entries.
 */
enum GridseStatus gridse_plan_inject_outliers(struct GridsePlan *plan,
                                              const double *re,
                                              const double *im,
                                              size_t n,
                                              size_t count,
                                              double factor,
                                              uint64_t seed,
                                              size_t *indices);

/**
 * # Safety
 * `plan` must be null or a live plan handle.
 */
size_t gridse_plan_len(const struct GridsePlan *plan);

/**
 * # Safety
 * `plan` must be null or a handle from this library that is not used again.
 */
void gridse_plan_free(struct GridsePlan *plan);

/**
 * Options matching the library defaults for `solver`.
 */
struct GridseSolveOptions gridse_solve_options_default(enum GridseSolver solver);

/**
 * Estimates the state from `plan`, writing the gauge-aligned estimate to
 * `re`/`im` (`n` entries) and, for robust solvers, up to `flagged_cap`
 * flagged meter indices to `flagged`. `summary` may be null.
 *
 * # Safety
 * Buffers must have the stated sizes; `flagged` may be null when
 * `flagged_cap` is 0.
 */
enum GridseStatus gridse_solve(const struct GridsePlan *plan,
                               const struct GridseSolveOptions *options,
                               double *re,
                               double *im,
                               size_t n,
                               size_t *flagged,
                               size_t flagged_cap,
                               struct GridseSolveSummary *summary);

/**
 * Relative error `‖v̂ − v‖₂ / ‖v‖₂` after pinning both slack angles to 0;
 * NaN on a null argument.
 *
 * # Safety
 * All four buffers must hold `n` doubles; `slack < n`.
 */
double gridse_rmse(const double *est_re,
                   const double *est_im,
                   const double *true_re,
                   const double *true_im,
                   size_t n,
                   size_t slack);

/**
 * Keeps the `gamma` largest-magnitude entries of `chi` (ties to the lower
 * index) and zeroes the rest into `out`.
 *
 * # Safety
 * `chi` and `out` must hold `len` doubles.
 */
enum GridseStatus gridse_hard_threshold(const double *chi, size_t len, size_t gamma, double *out);

/**
 * Runs a Monte-Carlo experiment described by a JSON config and returns the
 * report JSON through `out`; release it with [`gridse_string_free`].
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GridseStatus gridse_bench_json(const char *config_json, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void gridse_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDSE_H */
