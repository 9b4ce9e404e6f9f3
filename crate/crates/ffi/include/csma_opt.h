#ifndef CSMA_OPT_H
#define CSMA_OPT_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsmaStatus {
  CSMA_STATUS_OK = 0,
  CSMA_STATUS_NULL_POINTER = 1,
  CSMA_STATUS_INVALID_ARGUMENT = 2,
  CSMA_STATUS_INVALID_GRAPH = 3,
  CSMA_STATUS_GRAPH_TOO_LARGE = 4,
  CSMA_STATUS_LENGTH_MISMATCH = 5,
  CSMA_STATUS_BUFFER_TOO_SMALL = 6,
  CSMA_STATUS_INFEASIBLE_SCHEDULE = 7,
  CSMA_STATUS_NO_CONVERGENCE = 8,
  CSMA_STATUS_PROBABILITY_CAP = 9,
  CSMA_STATUS_CONFIG = 10,
  CSMA_STATUS_IO = 11,
  CSMA_STATUS_RUNTIME = 12,
  CSMA_STATUS_PANIC = 13,
} CsmaStatus;

typedef enum CsmaHolding {
  CSMA_HOLDING_GEOMETRIC = 0,
  CSMA_HOLDING_DETERMINISTIC = 1,
} CsmaHolding;

/**
 * Opaque conflict graph.
 */
typedef struct CsmaGraph CsmaGraph;

/**
 * Opaque list of feasible schedules of a graph, in canonical order.
 */
typedef struct CsmaSchedules CsmaSchedules;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *csma_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *csma_last_error_message(void);

/**
 * Builds a graph from `n_edges` interfering pairs stored flat in `edges`
 * (`2 * n_edges` entries).
 *
 * # Safety
 * `edges` must point to `2 * n_edges` readable values and `out` must be
 * writable.
 */
enum CsmaStatus csma_graph_new(size_t links,
                               const size_t *edges,
                               size_t n_edges,
                               struct CsmaGraph **out);

/**
 * Builds a graph from `{"links": L, "conflicts": [[a, b], ...]}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` must be writable.
 */
enum CsmaStatus csma_graph_from_json(const char *json, struct CsmaGraph **out);

/**
 * Number of links, or 0 for a NULL handle.
 *
 * # Safety
 * `g` must be NULL or a live graph handle.
 */
size_t csma_graph_links(const struct CsmaGraph *g);

/**
 * # Safety
 * `g` must be NULL or a handle from this library that is not used again.
 */
void csma_graph_free(struct CsmaGraph *g);

/**
 * Enumerates the independent sets of `g`.
 *
 * # Safety
 * `g` must be a live graph handle and `out` must be writable.
 */
enum CsmaStatus csma_schedules_enumerate(const struct CsmaGraph *g, struct CsmaSchedules **out);

/**
 * Number of schedules, or 0 for a NULL handle.
 *
 * # Safety
 * `s` must be NULL or a live schedule handle.
 */
size_t csma_schedules_count(const struct CsmaSchedules *s);

/**
 * Copies the schedules as link bit masks (link 0 in the lowest bit).
 *
 * # Safety
 * `out` must have room for `len` values.
 */
enum CsmaStatus csma_schedules_masks(const struct CsmaSchedules *s, uint64_t *out, size_t len);

/**
 * # Safety
 * `s` must be NULL or a handle from this library that is not used again.
 */
void csma_schedules_free(struct CsmaSchedules *s);

/**
 * Stationary schedule distribution of CSMA with per-link `lambda` and common `mu`.
 *
 * # Safety
 * `lambda` must hold `links` values and `pi` must have room for `pi_len`.
 */
enum CsmaStatus csma_stationary_distribution(const struct CsmaSchedules *s,
                                             const double *lambda,
                                             size_t links,
                                             double mu,
                                             double *pi,
                                             size_t pi_len);

/**
 * Per-link throughput under the schedule distribution `pi`.
 *
 * # Safety
 * `pi` must hold `pi_len` values and `gamma` must have room for `links`.
 */
enum CsmaStatus csma_link_throughputs(const struct CsmaSchedules *s,
                                      const double *pi,
                                      size_t pi_len,
                                      double *gamma,
                                      size_t links);

/**
 * Solves the entropy-regularized log-utility problem with weight `v` and
 * multipliers in `[nu_min, nu_max]` (`nu_max` may be infinite).
 *
 * # Safety
 * `gamma` and `nu` must each have room for `links` values.
 */
enum CsmaStatus csma_solve_entropy_regularized(const struct CsmaSchedules *s,
                                               double v,
                                               double nu_min,
                                               double nu_max,
                                               double tol,
                                               double *gamma,
                                               double *nu,
                                               size_t links);

/**
 * Proportionally fair throughputs (log utility, no regularization).
 *
 * # Safety
 * `gamma` must have room for `links` values.
 */
enum CsmaStatus csma_solve_utility_optimal(const struct CsmaSchedules *s,
                                           double tol,
                                           double *gamma,
                                           size_t links);

/**
 * Runs the queue-driven rate adaptation for `slots` slots and reports the
 * average throughput and the final queues. `algo_json` holds the algorithm
 * parameters (NULL for defaults); `q0` may be NULL to start at `q_min`.
 *
 * # Safety
 * Pointers must be valid for `links` values; `algo_json` must be NULL or
 * NUL-terminated.
 */
enum CsmaStatus csma_run_adaptive(const struct CsmaGraph *g,
                                  const char *algo_json,
                                  const double *q0,
                                  size_t slots,
                                  uint64_t seed,
                                  double *gamma,
                                  double *q_final,
                                  size_t links);

/**
 * Simulates `horizon` minislots of the slotted collision model at fixed
 * rates. Writes per-link throughput and mean no-success period, and the
 * fraction of transmission starts that collided.
 *
 * # Safety
 * `lambda`, `gamma` and `mean_gap` must be valid for `links` values and
 * `collision_rate` must be writable.
 */
enum CsmaStatus csma_run_dt(const struct CsmaGraph *g,
                            double epsilon,
                            double mu,
                            const double *lambda,
                            enum CsmaHolding holding,
                            uint64_t horizon,
                            uint64_t seed,
                            double *gamma,
                            double *mean_gap,
                            double *collision_rate,
                            size_t links);

/**
 * Runs one harness mode from a JSON config, writing outputs into `out_dir`.
 *
 * # Safety
 * All arguments must be NUL-terminated strings.
 */
enum CsmaStatus csma_run_experiment(const char *mode, const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSMA_OPT_H */
