#ifndef DUALSOLVE_H
#define DUALSOLVE_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by all functions.
typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_ARGUMENT = 2,
  DS_STATUS_PARSE = 3,
  DS_STATUS_IO = 4,
  DS_STATUS_NUMERICAL = 5,
  DS_STATUS_BACKBONE = 6,
  DS_STATUS_PANIC = 7,
} DsStatus;

// An analytic denoiser with a closed-form score.
typedef struct DsModel DsModel;

// Learned (or default) per-step parameters together with their schedule.
typedef struct DsParams DsParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ds_version(void);

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *ds_last_error(void);

void ds_clear_error(void);

// # Safety
// `s` must be null or a string returned by this library.
void ds_string_free(char *s);

// Data-prediction defaults for `steps` steps.
//
// `schedule` is one of "ot", "vp-cosine", "vp-linear", "ve". `mode` may be
// null (no mode recorded) or one of "p1", "p1c2", "p2", "p2c2".
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum DsStatus ds_params_default(uintptr_t steps,
                                const char *schedule,
                                const char *mode,
                                struct DsParams **out);

// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum DsStatus ds_params_from_json(const char *json, struct DsParams **out);

// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum DsStatus ds_params_load(const char *path, struct DsParams **out);

// Atomically write the parameter file.
//
// # Safety
// `params` must be a live handle; `path` must be NUL-terminated.
enum DsStatus ds_params_save(const struct DsParams *params, const char *path);

// Serialise to JSON; free the result with [`ds_string_free`].
//
// # Safety
// `params` must be a live handle; `out` must be writable.
enum DsStatus ds_params_to_json(const struct DsParams *params, char **out);

// Number of steps M (0 for a null handle).
//
// # Safety
// `params` must be null or a live handle.
uintptr_t ds_params_steps(const struct DsParams *params);

// Write the M+1 grid times, descending, into `out`.
//
// # Safety
// `out` must hold `len` doubles.
enum DsStatus ds_params_timesteps(const struct DsParams *params, double *out, uintptr_t len);

// Parameters for `steps` steps interpolated from two learned sets whose
// step counts bracket it.
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum DsStatus ds_params_interp(const struct DsParams *a,
                               const struct DsParams *b,
                               uintptr_t steps,
                               struct DsParams **out);

// # Safety
// `params` must be null or a handle not yet freed.
void ds_params_free(struct DsParams *params);

// Gaussian data distribution with per-axis mean and a shared std.
//
// # Safety
// `mean` must hold `dim` doubles; `out` must be writable.
enum DsStatus ds_model_gaussian(const double *mean,
                                uintptr_t dim,
                                double std,
                                struct DsModel **out);

// Two-class 1D mixture with components at -mu and +mu.
//
// # Safety
// `out` must be writable.
enum DsStatus ds_model_mixture_1d(double mu, double std, struct DsModel **out);

// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum DsStatus ds_model_from_json(const char *json, struct DsModel **out);

// # Safety
// `model` must be null or a live handle.
uintptr_t ds_model_dim(const struct DsModel *model);

// # Safety
// `model` must be null or a live handle.
uintptr_t ds_model_classes(const struct DsModel *model);

// # Safety
// `model` must be null or a handle not yet freed.
void ds_model_free(struct DsModel *model);

// Deterministic starting noise `sigma(t_max) * z` for `batch` samples,
// row-major into `out` (`batch * dim` doubles).
//
// # Safety
// `out` must hold `batch * dim` doubles.
enum DsStatus ds_initial_noise(const struct DsParams *params,
                               uintptr_t dim,
                               uintptr_t batch,
                               uint64_t seed,
                               double *out);

// Integrate `batch` states from t_max to t_min.
//
// `x_t` and `out` are row-major `batch * dim` arrays (they may alias).
// `cond` is null for unconditional sampling, otherwise `batch` class
// indices where a negative entry means unconditional. `mode` may be null to
// use the mode stored with the parameters (p1c2 when none is stored).
//
// # Safety
// Pointers must reference arrays of the stated sizes.
enum DsStatus ds_sample(const struct DsParams *params,
                        const struct DsModel *model,
                        const char *mode,
                        double guidance,
                        const double *x_t,
                        const int64_t *cond,
                        uintptr_t batch,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALSOLVE_H */
