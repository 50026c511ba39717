#ifndef LOL_H
#define LOL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum LolStatus {
  LOL_STATUS_OK = 0,
  LOL_STATUS_NULL_POINTER = 1,
  LOL_STATUS_INVALID_PARAM = 2,
  LOL_STATUS_SHAPE = 3,
  LOL_STATUS_EMPTY_SUBSET = 4,
  LOL_STATUS_INVARIANT = 5,
  LOL_STATUS_JSON = 6,
  LOL_STATUS_IO = 7,
  LOL_STATUS_CONFIG = 8,
  LOL_STATUS_UTF8 = 9,
  LOL_STATUS_PANIC = 10,
} LolStatus;

/**
 * Algorithm selector for [`lol_run_job`].
 */
typedef enum LolAlgorithm {
  LOL_ALGORITHM_LARGE_THEN_ANNEAL = 0,
  LOL_ALGORITHM_SMALL_CONSTANT = 1,
  LOL_ALGORITHM_MITIGATION_NOISE = 2,
} LolAlgorithm;

/**
 * Final state of a run.
 */
typedef enum LolRunStatus {
  LOL_RUN_STATUS_CONVERGED = 0,
  LOL_RUN_STATUS_MAX_ITERS = 1,
  LOL_RUN_STATUS_NON_FINITE = 2,
} LolRunStatus;

/**
 * Sampled dataset.
 */
typedef struct LolDataset LolDataset;

/**
 * Two-layer network.
 */
typedef struct LolNetwork LolNetwork;

/**
 * Distribution constants.
 */
typedef struct LolParams LolParams;

/**
 * Finished run: trace and final state.
 */
typedef struct LolRun LolRun;

/**
 * One trace row. Missing values are NaN.
 */
typedef struct LolRecord {
  uint64_t t;
  double lr;
  double train_loss;
  double reg_loss;
  double loss_m1_r;
  double loss_m1bar_g;
  double loss_m2bar;
  double rho;
  double almost_lin;
  double u_bar_fro;
  double w_bar_fro;
  double v_bar_fro;
  double hamming_frac;
  double test_err;
  double test_loss;
  double test_err_p_only;
  double test_err_q_only;
  double test_err_both;
  double span_residual;
  double alpha_norm;
} LolRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lol_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lol_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void lol_string_free(char *s);

/**
 * Builds distribution constants with the default overrides.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum LolStatus lol_params_new(size_t d,
                              double kappa,
                              double q0,
                              uint64_t seed,
                              struct LolParams **out);

/**
 * Sample count implied by `d / kappa^2`.
 *
 * # Safety
 * `params` must be a live handle.
 */
size_t lol_params_implied_n(const struct LolParams *params);

/**
 * # Safety
 * `params` must be NULL or a live handle from [`lol_params_new`].
 */
void lol_params_free(struct LolParams *params);

/**
 * Draws `n` examples from the training stream of `seed`.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum LolStatus lol_dataset_generate(const struct LolParams *params,
                                    size_t n,
                                    uint64_t seed,
                                    struct LolDataset **out);

/**
 * # Safety
 * `data` must be a live handle.
 */
size_t lol_dataset_len(const struct LolDataset *data);

/**
 * Empirical fractions `p` (no Q block) and `q` (no P block).
 *
 * # Safety
 * `data` must be a live handle; `p` and `q` valid pointers.
 */
enum LolStatus lol_dataset_fractions(const struct LolDataset *data, double *p, double *q);

/**
 * Serializes constants and examples to JSON.
 *
 * # Safety
 * All pointers must be valid; free the result with [`lol_string_free`].
 */
enum LolStatus lol_dataset_to_json(const struct LolParams *params,
                                   const struct LolDataset *data,
                                   char **out);

/**
 * # Safety
 * `data` must be NULL or a live handle.
 */
void lol_dataset_free(struct LolDataset *data);

/**
 * Dense network with `m` hidden units on inputs of size `2d`, drawn from the
 * init stream of `seed`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LolStatus lol_network_init(size_t m,
                                size_t d,
                                double tau0,
                                uint64_t seed,
                                struct LolNetwork **out);

/**
 * Parses a network checkpoint.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LolStatus lol_network_from_json(const char *json, struct LolNetwork **out);

/**
 * # Safety
 * `net` must be a live handle; free the result with [`lol_string_free`].
 */
enum LolStatus lol_network_to_json(const struct LolNetwork *net, char **out);

/**
 * Output on the concatenated input `x` of length `2d`.
 *
 * # Safety
 * `x` must point to `len` doubles; `net` and `out` must be valid.
 */
enum LolStatus lol_network_forward(const struct LolNetwork *net,
                                   const double *x,
                                   size_t len,
                                   double *out);

/**
 * Mean logistic loss over the dataset.
 *
 * # Safety
 * All pointers must be valid.
 */
enum LolStatus lol_network_loss(const struct LolNetwork *net,
                                const struct LolDataset *data,
                                double *out);

/**
 * # Safety
 * `net` must be NULL or a live handle.
 */
void lol_network_free(struct LolNetwork *net);

/**
 * Runs one algorithm for one seed of an experiment config (JSON text, merged
 * over its profile like the CLI does). Nothing is written to disk.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LolStatus lol_run_job(const char *config_json,
                           enum LolAlgorithm algorithm,
                           uint64_t seed,
                           struct LolRun **out);

/**
 * # Safety
 * `run` must be a live handle.
 */
enum LolRunStatus lol_run_status(const struct LolRun *run);

/**
 * Annealing iteration, or -1 when the run never annealed.
 *
 * # Safety
 * `run` must be a live handle.
 */
int64_t lol_run_t0(const struct LolRun *run);

/**
 * Number of trace rows.
 *
 * # Safety
 * `run` must be a live handle.
 */
size_t lol_run_trace_len(const struct LolRun *run);

/**
 * Copies trace row `i` into `out`.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum LolStatus lol_run_record(const struct LolRun *run, size_t i, struct LolRecord *out);

/**
 * Copy of the final network. Free it with [`lol_network_free`].
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum LolStatus lol_run_network(const struct LolRun *run, struct LolNetwork **out);

/**
 * # Safety
 * `run` must be NULL or a live handle.
 */
void lol_run_free(struct LolRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOL_H */
