#ifndef NMQSD_H
#define NMQSD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NmqsdMethod {
  NMQSD_METHOD_NMQSD = 0,
  NMQSD_METHOD_MQSD = 1,
} NmqsdMethod;

/*
 Result codes. The numeric values match the command-line exit codes.
 */
typedef enum NmqsdStatus {
  NMQSD_STATUS_OK = 0,
  NMQSD_STATUS_NULL_POINTER = 1,
  NMQSD_STATUS_INVALID_ARGUMENT = 2,
  NMQSD_STATUS_NUMERICAL = 3,
  NMQSD_STATUS_IO = 4,
  NMQSD_STATUS_PANIC = 5,
} NmqsdStatus;

typedef enum NmqsdVariant {
  NMQSD_VARIANT_NON_MARKOV = 0,
  NMQSD_VARIANT_MARKOV = 1,
} NmqsdVariant;

/*
 Opaque ensemble result handle.
 */
typedef struct NmqsdEnsemble NmqsdEnsemble;

/*
 Opaque model handle.
 */
typedef struct NmqsdModel NmqsdModel;

/*
 Integration and sampling settings for [`nmqsd_run_ensemble`].
 A `dt` of zero selects the method's default step.
 */
typedef struct NmqsdRunConfig {
  enum NmqsdMethod method;
  size_t n_traj;
  double t_max;
  double dt;
  double sample_every;
  uint64_t seed;
  size_t workers;
  size_t initial_level;
  /*
   Keep per-trajectory P(t) rows so the result can be analyzed.
   */
  bool keep_ptable;
} NmqsdRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copy the last error message into `buf` (NUL-terminated, truncated to
 `len`). Returns the full message length excluding the terminator.

 # Safety
 `buf` must be null or valid for `len` bytes.
 */
size_t nmqsd_last_error(char *buf, size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *nmqsd_version(void);

/*
 The default three-level magnesium model.

 # Safety
 `out` must be valid for a pointer write.
 */
enum NmqsdStatus nmqsd_model_mg24(struct NmqsdModel **out);

/*
 Driven two-level system without a bath.

 # Safety
 `out` must be valid for a pointer write.
 */
enum NmqsdStatus nmqsd_model_rabi(double omega, struct NmqsdModel **out);

/*
 Load a model: a preset name or a config file path.

 # Safety
 `name` must be a NUL-terminated string; `out` valid for a pointer write.
 */
enum NmqsdStatus nmqsd_model_load(const char *name, struct NmqsdModel **out);

/*
 Hilbert-space dimension of `model`, or 0 if it is null.

 # Safety
 `model` must be null or a live handle.
 */
size_t nmqsd_model_dim(const struct NmqsdModel *model);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void nmqsd_model_free(struct NmqsdModel *model);

/*
 Memory time of the exponential sum given as three parallel arrays.

 # Safety
 Each array must hold `n` values; `out` must be valid for a write.
 */
enum NmqsdStatus nmqsd_kernel_memory_time(const double *amplitude,
                                          const double *decay,
                                          const double *frequency,
                                          size_t n,
                                          double *out);

/*
 Run a trajectory ensemble from basis level `cfg.initial_level`.

 # Safety
 `model` must be a live handle, `cfg` readable, `out` valid for a write.
 */
enum NmqsdStatus nmqsd_run_ensemble(const struct NmqsdModel *model,
                                    const struct NmqsdRunConfig *cfg,
                                    struct NmqsdEnsemble **out);

/*
 Number of output times, or 0 if `ens` is null.

 # Safety
 `ens` must be null or a live handle.
 */
size_t nmqsd_ensemble_n_times(const struct NmqsdEnsemble *ens);

/*
 Trajectories that completed and that aborted.

 # Safety
 `ens` must be a live handle; outputs must be valid for writes.
 */
enum NmqsdStatus nmqsd_ensemble_counts(const struct NmqsdEnsemble *ens,
                                       size_t *n_ok,
                                       size_t *failures);

/*
 Copy the output times into `times` (length `len`, at least `n_times`).

 # Safety
 `ens` must be a live handle; `times` valid for `len` writes.
 */
enum NmqsdStatus nmqsd_ensemble_times(const struct NmqsdEnsemble *ens, double *times, size_t len);

/*
 Copy the mean density matrix at output `k` as row-major real and
 imaginary parts, each `dim * dim` long.

 # Safety
 `ens` must be a live handle; `re` and `im` valid for `len` writes.
 */
enum NmqsdStatus nmqsd_ensemble_rho(const struct NmqsdEnsemble *ens,
                                    size_t k,
                                    double *re,
                                    double *im,
                                    size_t len);

/*
 Histogram the kept P(t) rows, fit the lineshape and report the
 bright/dark peak-area ratio. A zero `t_min` and `t_max` selects the
 default window.

 # Safety
 `ens` must be a live handle; `ratio` valid for a write.
 */
enum NmqsdStatus nmqsd_ensemble_area_ratio(const struct NmqsdEnsemble *ens,
                                           double delta_p,
                                           double t_min,
                                           double t_max,
                                           enum NmqsdVariant variant,
                                           double *ratio);

/*
 # Safety
 `ens` must be null or a handle not yet freed.
 */
void nmqsd_ensemble_free(struct NmqsdEnsemble *ens);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NMQSD_H */
