/* Generated by cbindgen; do not edit. */

#ifndef AMP_LAB_H
#define AMP_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AmpStatus {
  AMP_STATUS_OK = 0,
  AMP_STATUS_NULL_POINTER = 1,
  AMP_STATUS_INVALID_PARAMETER = 2,
  AMP_STATUS_INVALID_SPARSITY = 3,
  AMP_STATUS_INVALID_FRACTION = 4,
  AMP_STATUS_DIMENSION_MISMATCH = 5,
  AMP_STATUS_NUMERIC_FAILURE = 6,
  AMP_STATUS_CALIBRATION_FAILURE = 7,
  AMP_STATUS_DEGENERATE_DIRECTION = 8,
  AMP_STATUS_DEGENERATE_NORM = 9,
  AMP_STATUS_INVALID_DATA = 10,
  AMP_STATUS_CONFIG = 11,
  AMP_STATUS_FORMAT = 12,
  AMP_STATUS_IO = 13,
  AMP_STATUS_OUT_OF_RANGE = 14,
  AMP_STATUS_PANIC = 15,
} AmpStatus;

typedef enum AmpMode {
  AMP_MODE_SPARSE = 0,
  AMP_MODE_ROBUST = 1,
} AmpMode;

typedef enum AmpHFamily {
  AMP_H_FAMILY_LASSO_H1 = 0,
  AMP_H_FAMILY_LASSO_H2 = 1,
  AMP_H_FAMILY_ROBUST_H1 = 2,
  AMP_H_FAMILY_ROBUST_H2 = 3,
} AmpHFamily;

/**
 * A generated problem instance.
 */
typedef struct AmpModel AmpModel;

/**
 * An AMP run (t = 0, …, t_max).
 */
typedef struct AmpRun AmpRun;

/**
 * A state-evolution run (t = 1, …, t_max).
 */
typedef struct AmpSe AmpSe;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *amp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *amp_version(void);

/**
 * Sparse instance: k-sparse ±1/√k signal, Gaussian noise with ‖ε‖₂ ≈ `noise_norm`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum AmpStatus amp_model_new_sparse(size_t n,
                                    size_t p,
                                    size_t k,
                                    double noise_norm,
                                    uint64_t seed,
                                    uint64_t trial,
                                    struct AmpModel **out_model);

/**
 * Robust instance: dense ‖θ*‖₂ = 1 signal, σ² = 1/n noise with a fraction
 * `eps_h` replaced by a point mass at 5σ.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum AmpStatus amp_model_new_robust(size_t n,
                                    size_t p,
                                    double eps_h,
                                    uint64_t seed,
                                    uint64_t trial,
                                    struct AmpModel **out_model);

/**
 * Instance described by a TOML experiment config (base size) for `trial`.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` a valid pointer.
 */
enum AmpStatus amp_model_from_config(const char *config,
                                     uint64_t trial,
                                     struct AmpModel **out_model);

/**
 * # Safety
 * `model` must come from an `amp_model_new_*` call, or be null.
 */
void amp_model_free(struct AmpModel *model);

/**
 * # Safety
 * `model` must be a live handle; the out pointers valid or null.
 */
enum AmpStatus amp_model_dims(const struct AmpModel *model, size_t *n, size_t *p, size_t *k);

/**
 * Copies θ* (length p) into `buf`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum AmpStatus amp_model_copy_signal(const struct AmpModel *model, double *buf, size_t len);

/**
 * Copies ε (length n) into `buf`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum AmpStatus amp_model_copy_noise(const struct AmpModel *model, double *buf, size_t len);

/**
 * Runs AMP for `t_max` iterations. In robust mode a non-positive `lambda`
 * means 1/√n.
 *
 * # Safety
 * `model` must be a live handle and `out_run` valid.
 */
enum AmpStatus amp_run(const struct AmpModel *model,
                       enum AmpMode mode,
                       double lambda,
                       size_t t_max,
                       struct AmpRun **out_run);

/**
 * # Safety
 * `run` must come from `amp_run`, or be null.
 */
void amp_run_free(struct AmpRun *run);

/**
 * # Safety
 * `run` must be a live handle.
 */
enum AmpStatus amp_run_t_max(const struct AmpRun *run, size_t *t_max);

/**
 * ‖θ_t − θ*‖₂, ‖F_t(β_t)‖₂ and ‖G_t(s_t)‖₂ at iteration t (any out pointer
 * may be null).
 *
 * # Safety
 * `run` must be a live handle.
 */
enum AmpStatus amp_run_norms(const struct AmpRun *run,
                             size_t t,
                             double *risk,
                             double *gamma_norm,
                             double *alpha_norm);

/**
 * τ_t or b_t; `defined` is set to 0 where the iteration has none.
 *
 * # Safety
 * `run` must be a live handle; `value` and `defined` valid.
 */
enum AmpStatus amp_run_param(const struct AmpRun *run, size_t t, double *value, int32_t *defined);

/**
 * Copies θ_t (length p), t ≤ t_max + 1.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum AmpStatus amp_run_copy_theta(const struct AmpRun *run, size_t t, double *buf, size_t len);

/**
 * Builds the exact decomposition of the run and reports the worst relative
 * deviation over its exactness checks (identities, span membership, basis
 * orthonormality) and the number of completed steps.
 *
 * # Safety
 * `run` must be a live handle; out pointers valid or null.
 */
enum AmpStatus amp_run_decomp_check(const struct AmpRun *run,
                                    uint64_t aux_seed,
                                    double *worst,
                                    size_t *steps);

/**
 * State evolution for the model's θ* and ε.
 *
 * # Safety
 * `model` must be a live handle and `out_se` valid.
 */
enum AmpStatus amp_se_run(const struct AmpModel *model,
                          enum AmpMode mode,
                          double lambda,
                          size_t t_max,
                          struct AmpSe **out_se);

/**
 * # Safety
 * `se` must come from `amp_se_run`, or be null.
 */
void amp_se_free(struct AmpSe *se);

/**
 * γ*_t for 1 ≤ t ≤ t_max + 1 and α*_t for 1 ≤ t ≤ t_max (α is NaN at
 * t_max + 1).
 *
 * # Safety
 * `se` must be a live handle; out pointers valid or null.
 */
enum AmpStatus amp_se_values(const struct AmpSe *se, size_t t, double *gamma, double *alpha);

/**
 * One H-function value at ω (lasso) or τ (robust) with default inner grids.
 *
 * # Safety
 * `value` must be valid.
 */
enum AmpStatus amp_h_value(enum AmpHFamily family, double x, double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMP_LAB_H */
