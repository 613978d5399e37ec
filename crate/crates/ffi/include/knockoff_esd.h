#ifndef KNOCKOFF_ESD_H
#define KNOCKOFF_ESD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KeStatus {
  KE_STATUS_OK = 0,
  KE_STATUS_NULL_POINTER = 1,
  KE_STATUS_INVALID_ARGUMENT = 2,
  KE_STATUS_NOT_SYMMETRIC = 3,
  KE_STATUS_NOT_PSD = 4,
  KE_STATUS_SINGULAR = 5,
  KE_STATUS_INFEASIBLE = 6,
  KE_STATUS_DIMENSION_MISMATCH = 7,
  KE_STATUS_SUPPORT_TOO_LARGE = 8,
  KE_STATUS_NOT_FOREST = 9,
  KE_STATUS_CONFIG = 10,
  KE_STATUS_IO = 11,
  KE_STATUS_NUMERICAL = 12,
  KE_STATUS_PANIC = 13,
} KeStatus;

typedef enum KeMechanism {
  KE_MECHANISM_EQUI = 0,
  KE_MECHANISM_ASDP = 1,
  KE_MECHANISM_CI = 2,
} KeMechanism;

/**
 * Covariance matrix with its Cholesky factor and precision.
 */
typedef struct KeCov KeCov;

/**
 * Knockoff construction for one covariance and mechanism.
 */
typedef struct KeKnockoff KeKnockoff;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call on the same thread.
 */
const char *ke_last_error_message(void);

/**
 * Heap-ordered binary tree with correlation `rho` on every edge.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum KeStatus ke_cov_binary_tree(size_t p, double rho, struct KeCov **out);

/**
 * Markov chain with `p - 1` adjacent correlations.
 *
 * # Safety
 * `rho_seq` must point to `p - 1` doubles (may be NULL when `p <= 1`);
 * `out` must be valid for a pointer write.
 */
enum KeStatus ke_cov_markov_chain(size_t p, const double *rho_seq, struct KeCov **out);

/**
 * Explicit `p x p` covariance in row-major order.
 *
 * # Safety
 * `data` must point to `p * p` doubles; `out` must be valid for a pointer write.
 */
enum KeStatus ke_cov_explicit(const double *data, size_t p, struct KeCov **out);

/**
 * Dimension of `cov`, or 0 for NULL.
 *
 * # Safety
 * `cov` must be NULL or a live handle.
 */
size_t ke_cov_dim(const struct KeCov *cov);

/**
 * # Safety
 * `cov` must be NULL or a handle not yet freed.
 */
void ke_cov_free(struct KeCov *cov);

/**
 * Builds the knockoff construction for `mechanism`.
 *
 * # Safety
 * `cov` must be a live handle; `out` must be valid for a pointer write.
 */
enum KeStatus ke_knockoff_new(const struct KeCov *cov,
                              enum KeMechanism mechanism,
                              struct KeKnockoff **out);

/**
 * Dimension `p` of the construction, or 0 for NULL.
 *
 * # Safety
 * `ko` must be NULL or a live handle.
 */
size_t ke_knockoff_dim(const struct KeKnockoff *ko);

/**
 * Copies the `s` vector into `out`, which must hold exactly `len = p` values.
 *
 * # Safety
 * `ko` must be a live handle; `out` must be valid for `len` doubles.
 */
enum KeStatus ke_knockoff_s(const struct KeKnockoff *ko, double *out, size_t len);

/**
 * # Safety
 * `ko` must be NULL or a handle not yet freed.
 */
void ke_knockoff_free(struct KeKnockoff *ko);

/**
 * Whether conditional-independence knockoffs exist for `cov`.
 *
 * # Safety
 * `cov` must be a live handle; `out` must be valid for a write.
 */
enum KeStatus ke_ci_exists(const struct KeCov *cov, bool *out);

/**
 * Lévy-Prokhorov distance of the empirical law of `values` from a point mass at zero.
 *
 * # Safety
 * `values` must point to `len` doubles; `out` must be valid for a write.
 */
enum KeStatus ke_lp_distance_zero(const double *values, size_t len, double *out);

/**
 * # Safety
 * `cov` must be a live handle; `out_lp` must be valid for a write.
 */
enum KeStatus ke_esd_lasso(const struct KeCov *cov, double scale, double *out_lp);

/**
 * # Safety
 * `ko` must be a live handle; `out_lp` must be valid for a write.
 */
enum KeStatus ke_esd_knockoff(const struct KeKnockoff *ko, double scale, double *out_lp);

/**
 * # Safety
 * `cov` must be a live handle; `out_lp` must be valid for a write.
 */
enum KeStatus ke_esd_ci_tree(const struct KeCov *cov, double scale, double *out_lp);

/**
 * Writes the unclamped `1 / lambda_min(Sigma)` to `out_raw` and its
 * clamped value to `out_lp`.
 *
 * # Safety
 * `cov` must be a live handle; both outputs must be valid for a write.
 */
enum KeStatus ke_esd_equi(const struct KeCov *cov, double *out_raw, double *out_lp);

/**
 * Knockoff threshold `T` for statistics `delta`; `offset` is 0 (knockoff)
 * or 1 (knockoff+). `T` is `+inf` when nothing can be selected.
 *
 * # Safety
 * `delta` must point to `len` doubles; `out` must be valid for a write.
 */
enum KeStatus ke_knockoff_threshold(const double *delta,
                                    size_t len,
                                    double q,
                                    uint8_t offset,
                                    double *out);

/**
 * Runs the experiment described by the JSON `config` and writes the trial
 * CSV to `out_path`. Relative paths in the config resolve against
 * `base_dir` (NULL means the current directory). `workers = 0` uses every
 * CPU.
 *
 * # Safety
 * `config` and `out_path` must be nul-terminated strings; `base_dir` must be
 * NULL or nul-terminated.
 */
enum KeStatus ke_simulate(const char *config,
                          const char *base_dir,
                          size_t workers,
                          const char *out_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KNOCKOFF_ESD_H */
