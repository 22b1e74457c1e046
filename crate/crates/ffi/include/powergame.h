#ifndef POWERGAME_H
#define POWERGAME_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum PgStatus {
  PG_STATUS_OK = 0,
  PG_STATUS_NULL_POINTER = 1,
  PG_STATUS_INVALID_ARGUMENT = 2,
  PG_STATUS_DEGENERATE = 3,
  PG_STATUS_TAU_TOO_SMALL = 4,
  PG_STATUS_BUFFER_TOO_SMALL = 5,
  PG_STATUS_PANIC = 6,
} PgStatus;

/**
 * Update schedule of the plain game.
 */
typedef enum PgSchedule {
  PG_SCHEDULE_JACOBI = 0,
  PG_SCHEDULE_GAUSS_SEIDEL = 1,
  PG_SCHEDULE_ASYNCHRONOUS = 2,
} PgSchedule;

/**
 * Merit steering a controlled run.
 */
typedef enum PgMerit {
  PG_MERIT_NONE = 0,
  PG_MERIT_MIN_MUI = 1,
  PG_MERIT_MAX_SUM_RATE = 2,
} PgMerit;

/**
 * Outcome of a run.
 */
typedef enum PgVerdict {
  PG_VERDICT_CONVERGED = 0,
  PG_VERDICT_OSCILLATING = 1,
  PG_VERDICT_EXHAUSTED = 2,
} PgVerdict;

/**
 * Opaque precoded network.
 */
typedef struct PgNetwork PgNetwork;

/**
 * Opaque run trace.
 */
typedef struct PgTrace PgTrace;

/**
 * Network description used by [`pg_network_generate`].
 */
typedef struct PgNetworkParams {
  size_t users;
  size_t tx_antennas;
  size_t rx_antennas;
  double direct_distance;
  double cross_distance;
  double pathloss_exponent;
  /**
   * `1` gives flat channels.
   */
  size_t carriers;
  size_t taps;
  double noise_power;
  /**
   * Linear per-user budget.
   */
  double budget;
  uint64_t seed;
} PgNetworkParams;

/**
 * Uniqueness diagnostics of a network.
 */
typedef struct PgUniqueness {
  double row_margin;
  double col_margin;
  double spectral_radius;
  bool row_condition;
  bool col_condition;
  bool unique_guaranteed;
} PgUniqueness;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t pg_last_error(char *buf, size_t len);

/**
 * Draws and precodes a symmetric random network.
 *
 * # Safety
 * `params` must be valid; `out` must be valid for a write.
 */
enum PgStatus pg_network_generate(const struct PgNetworkParams *params, struct PgNetwork **out);

/**
 * Releases a network. Null is ignored.
 *
 * # Safety
 * `net` must be null or a handle from [`pg_network_generate`] not yet freed.
 */
void pg_network_free(struct PgNetwork *net);

/**
 * Length of a stacked power vector of `net`; 0 for null.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t pg_network_dim(const struct PgNetwork *net);

/**
 * Number of users of `net`; 0 for null.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t pg_network_users(const struct PgNetwork *net);

/**
 * Single-user water-filling of `budget` over levels `c[0..len]`.
 *
 * # Safety
 * `c` and `powers` must be valid for `len` elements; `level` may be null.
 */
enum PgStatus pg_waterfill(const double *c,
                           size_t len,
                           double budget,
                           double *powers,
                           double *level);

/**
 * Row, column and spectral-radius uniqueness tests.
 *
 * # Safety
 * `net` must be a live handle and `out` valid for a write.
 */
enum PgStatus pg_check_uniqueness(const struct PgNetwork *net, struct PgUniqueness *out);

/**
 * Plain iterative water-filling from the uniform profile.
 *
 * # Safety
 * `net` must be a live handle and `out` valid for a write.
 */
enum PgStatus pg_run_iwfa(const struct PgNetwork *net,
                          enum PgSchedule schedule,
                          size_t it_max,
                          double tol,
                          size_t max_delay,
                          uint64_t seed,
                          struct PgTrace **out);

/**
 * Regularized (`merit = None`) or merit-controlled run with the smallest
 * admissible `tau` and `eps_n = 1/(1+10n)`; inexact inner solves with
 * `delta_n = 0.95^n` when `inexact` is set.
 *
 * # Safety
 * `net` must be a live handle and `out` valid for a write.
 */
enum PgStatus pg_run_controlled(const struct PgNetwork *net,
                                enum PgMerit merit,
                                bool inexact,
                                struct PgTrace **out);

/**
 * Releases a trace. Null is ignored.
 *
 * # Safety
 * `trace` must be null or a live handle not yet freed.
 */
void pg_trace_free(struct PgTrace *trace);

/**
 * Verdict of a run; `period` receives the oscillation period (0 otherwise)
 * and may be null.
 *
 * # Safety
 * `trace` must be a live handle; `verdict` valid for a write.
 */
enum PgStatus pg_trace_verdict(const struct PgTrace *trace,
                               enum PgVerdict *verdict,
                               size_t *period);

/**
 * Iterations (outer iterations for controlled runs) used; 0 for null.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t pg_trace_iterations(const struct PgTrace *trace);

/**
 * Total inner sweeps of a controlled run; 0 for plain runs or null.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t pg_trace_inner_iterations(const struct PgTrace *trace);

/**
 * Final sum-rate in bits per channel use; NaN for null.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
double pg_trace_sum_rate(const struct PgTrace *trace);

/**
 * Copies the final power profile into `buf[0..len]`.
 *
 * # Safety
 * `trace` must be a live handle and `buf` valid for `len` elements.
 */
enum PgStatus pg_trace_final_powers(const struct PgTrace *trace, double *buf, size_t len);

/**
 * `max_q ||waterfill(c_q(p), P_q) - p_q||_inf` at `p[0..len]`.
 *
 * # Safety
 * `net` must be a live handle, `p` valid for `len` elements, `out` for a write.
 */
enum PgStatus pg_best_response_residual(const struct PgNetwork *net,
                                        const double *p,
                                        size_t len,
                                        double *out);

/**
 * Sum-rate in bits per channel use at `p[0..len]`.
 *
 * # Safety
 * `net` must be a live handle, `p` valid for `len` elements, `out` for a write.
 */
enum PgStatus pg_sum_rate(const struct PgNetwork *net, const double *p, size_t len, double *out);

/**
 * Interference-free time-sharing sum-rate in bits per channel use.
 *
 * # Safety
 * `net` must be a live handle and `out` valid for a write.
 */
enum PgStatus pg_tdma_baseline(const struct PgNetwork *net, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POWERGAME_H */
