#ifndef PEAKGATE_H
#define PEAKGATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum PgBridgeKind {
  /**
   * `h(s) = scale * s + offset`.
   */
  PG_BRIDGE_KIND_AFFINE = 0,
  /**
   * `h(s) = sqrt(scale * s)`.
   */
  PG_BRIDGE_KIND_SQRT_SCALED = 1,
} PgBridgeKind;

typedef enum PgStatus {
  PG_STATUS_OK = 0,
  PG_STATUS_NULL_POINTER = 1,
  PG_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed or inconsistent problem, or a failed hypothesis check.
   */
  PG_STATUS_CONFIG = 3,
  /**
   * No term exceeded `h(0)` within the guard.
   */
  PG_STATUS_GUARD_EXCEEDED = 4,
  /**
   * The certificate pair does not dominate the sequence.
   */
  PG_STATUS_DOMINATION_VIOLATION = 5,
  PG_STATUS_NON_FINITE = 6,
  /**
   * A caller-supplied callback reported failure.
   */
  PG_STATUS_CALLBACK = 7,
  PG_STATUS_OUT_OF_RANGE = 8,
  PG_STATUS_PANIC = 9,
} PgStatus;

/**
 * Parsed and validated problem.
 */
typedef struct PgProblem PgProblem;

/**
 * Result of a solve.
 */
typedef struct PgSolution PgSolution;

/**
 * Writes term `k` to `*out` and returns 0, or returns nonzero on failure.
 */
typedef int (*PgTermFn)(void *user, size_t k, double *out);

typedef struct PgBridge {
  enum PgBridgeKind kind;
  double scale;
  double offset;
} PgBridge;

typedef struct PgTraceRow {
  size_t k;
  double value;
  bool in_residual;
  /**
   * Stopping formula at `k`; `INFINITY` outside the residual set.
   */
  double formula;
  bool has_stopping;
  /**
   * Stopping integer after rank `k`; meaningful when `has_stopping`.
   */
  uint64_t stopping_after;
  bool updated;
} PgTraceRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pg_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next library call on the same thread.
 */
const char *pg_last_error_message(void);

/**
 * Parses and validates a JSON problem description.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PgStatus pg_problem_from_json(const char *json, struct PgProblem **out);

/**
 * # Safety
 * `problem` must come from [`pg_problem_from_json`] and not be freed yet.
 */
void pg_problem_free(struct PgProblem *problem);

/**
 * # Safety
 * `problem` must be a live handle and `out` a valid pointer.
 */
enum PgStatus pg_problem_solve(const struct PgProblem *problem, struct PgSolution **out);

/**
 * Solves the peak problem for a sequence supplied term by term, with the
 * certificate pair `(bridge, beta)`.
 *
 * # Safety
 * `term` must be safe to call with `user` from this thread; `out` must be valid.
 */
enum PgStatus pg_solve_sequence(PgTermFn term,
                                void *user,
                                struct PgBridge bridge,
                                double beta,
                                size_t guard,
                                struct PgSolution **out);

/**
 * # Safety
 * `solution` must come from a solve call and not be freed yet.
 */
void pg_solution_free(struct PgSolution *solution);

/**
 * Peak value, `NAN` for a null handle.
 *
 * # Safety
 * `solution` must be a live handle or NULL.
 */
double pg_solution_optimum(const struct PgSolution *solution);

/**
 * Smallest rank attaining the peak; 0 for a null handle.
 *
 * # Safety
 * `solution` must be a live handle or NULL.
 */
size_t pg_solution_argmax_rank(const struct PgSolution *solution);

/**
 * Final stopping integer; 0 for a null handle.
 *
 * # Safety
 * `solution` must be a live handle or NULL.
 */
uint64_t pg_solution_stopping_integer(const struct PgSolution *solution);

/**
 * Number of visited ranks; 0 for a null handle.
 *
 * # Safety
 * `solution` must be a live handle or NULL.
 */
size_t pg_solution_trace_len(const struct PgSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle and `out` a valid pointer.
 */
enum PgStatus pg_solution_trace_row(const struct PgSolution *solution,
                                    size_t index,
                                    struct PgTraceRow *out);

/**
 * Full JSON report; release with [`pg_string_free`]. NULL on failure.
 *
 * # Safety
 * `solution` must be a live handle or NULL.
 */
char *pg_solution_report_json(const struct PgSolution *solution);

/**
 * # Safety
 * `s` must come from this library and not be freed yet.
 */
void pg_string_free(char *s);

/**
 * Applies the builtin benchmark map to `x[0..2]`, writing `out[0..2]`.
 *
 * # Safety
 * `x` and `out` must point to two doubles each.
 */
enum PgStatus pg_running_example_map(const double *x, double *out);

/**
 * Closed-form ratio operator of the benchmark map on the ball of squared
 * radius `radius_sq`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PgStatus pg_running_example_ratio(double radius_sq, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEAKGATE_H */
