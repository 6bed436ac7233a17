#ifndef PLC_MIMO_H
#define PLC_MIMO_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PlcStatus {
  PLC_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or an out-of-range argument.
   */
  PLC_STATUS_INVALID_ARGUMENT = 1,
  PLC_STATUS_INVALID_INPUT = 2,
  PLC_STATUS_DIMENSION_MISMATCH = 3,
  PLC_STATUS_PARAMETER = 4,
  PLC_STATUS_NUMERICAL = 5,
  PLC_STATUS_INSUFFICIENT_DATA = 6,
  PLC_STATUS_DEGENERATE_CHANNEL = 7,
  PLC_STATUS_PARSE = 8,
  PLC_STATUS_IO = 9,
  PLC_STATUS_CACHE_MISMATCH = 10,
  /**
   * A Rust panic was caught at the boundary.
   */
  PLC_STATUS_INTERNAL = 11,
} PlcStatus;

typedef enum PlcScheme {
  PLC_SCHEME_SISO = 0,
  PLC_SCHEME_MIMO2X2 = 1,
  PLC_SCHEME_MIMO2X3 = 2,
} PlcScheme;

/**
 * Channel realizations on a common grid.
 */
typedef struct PlcChannelSet PlcChannelSet;

/**
 * A factored model on a fixed grid.
 */
typedef struct PlcGenerator PlcGenerator;

/**
 * Model parameters.
 */
typedef struct PlcParams PlcParams;

/**
 * Pooled metric statistics of a channel set. `kappa_*` is NaN for SISO.
 */
typedef struct PlcSummary {
  size_t n_realizations;
  size_t n_modes;
  double acg_db_mean;
  double acg_db_std;
  double rms_ds_us_mean;
  double rms_ds_us_std;
  double cb_khz_mean;
  double cb_khz_std;
  double kappa_db_mean;
  double kappa_db_std;
} PlcSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *plc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *plc_version(void);

/**
 * The reference in-home parameter set.
 */
struct PlcParams *plc_params_default(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PlcStatus plc_params_read(const char *path, struct PlcParams **out);

/**
 * # Safety
 * `params` must come from this library; `path` must be NUL-terminated.
 */
enum PlcStatus plc_params_write(const struct PlcParams *params, const char *path);

/**
 * # Safety
 * `params` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void plc_params_free(struct PlcParams *params);

/**
 * Factors the model covariance for `scheme` on the default grid, keeping
 * every `decimate`-th bin. With a non-null `cache_dir` the square root is
 * reused from, or stored in, that directory.
 *
 * # Safety
 * `params` must come from this library, `cache_dir` must be null or
 * NUL-terminated and `out` a valid pointer.
 */
enum PlcStatus plc_generator_new(const struct PlcParams *params,
                                 enum PlcScheme scheme,
                                 size_t decimate,
                                 const char *cache_dir,
                                 struct PlcGenerator **out);

/**
 * # Safety
 * `generator` must come from this library and not be used afterwards.
 * Null is ignored.
 */
void plc_generator_free(struct PlcGenerator *generator);

/**
 * Realizations `0..n` of the stream family rooted at `seed`.
 *
 * # Safety
 * `generator` must come from this library and `out` be a valid pointer.
 */
enum PlcStatus plc_generate(const struct PlcGenerator *generator,
                            size_t n,
                            uint64_t seed,
                            struct PlcChannelSet **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum PlcStatus plc_channels_read(const char *path, struct PlcChannelSet **out);

/**
 * # Safety
 * `set` must come from this library; `path` must be NUL-terminated.
 */
enum PlcStatus plc_channels_write(const struct PlcChannelSet *set, const char *path);

/**
 * # Safety
 * `set` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void plc_channels_free(struct PlcChannelSet *set);

/**
 * Number of realizations and the `(n_rx, n_tx, n_freq)` shape of each.
 * Any output pointer may be null.
 *
 * # Safety
 * `set` must come from this library.
 */
enum PlcStatus plc_channels_dims(const struct PlcChannelSet *set,
                                 size_t *n_realizations,
                                 size_t *n_rx,
                                 size_t *n_tx,
                                 size_t *n_freq);

/**
 * Copies the bin frequencies (Hz) into `out`, which holds `len` values.
 *
 * # Safety
 * `set` must come from this library and `out` point to `len` writable values.
 */
enum PlcStatus plc_channels_frequencies(const struct PlcChannelSet *set, double *out, size_t len);

/**
 * Copies realization `r` into `out` as interleaved `(re, im)` pairs in
 * `[rx][tx][bin]` order; `len` counts doubles and must be
 * `2·n_rx·n_tx·n_freq`.
 *
 * # Safety
 * `set` must come from this library and `out` point to `len` writable values.
 */
enum PlcStatus plc_channels_copy(const struct PlcChannelSet *set,
                                 size_t r,
                                 double *out,
                                 size_t len);

/**
 * # Safety
 * `set` must come from this library and `out` be a valid pointer.
 */
enum PlcStatus plc_metrics_summary(const struct PlcChannelSet *set, struct PlcSummary *out);

/**
 * Water-filling capacity (bit/s) of every realization under the default
 * noise model and PSD mask; `out` holds `len` = number of realizations.
 *
 * # Safety
 * `set` must come from this library and `out` point to `len` writable values.
 */
enum PlcStatus plc_capacity(const struct PlcChannelSet *set, double *out, size_t len);

/**
 * Estimates model parameters from a channel set.
 *
 * # Safety
 * `set` must come from this library and `out` be a valid pointer.
 */
enum PlcStatus plc_characterize(const struct PlcChannelSet *set, struct PlcParams **out);

/**
 * Copies the 15 model coefficients into `out` in parameter-file order:
 * mu slope and intercept, non-CM and CM sigma slope and intercept, non-CM
 * and CM power-law `a, b, c`, GEV shape, location and scale.
 *
 * # Safety
 * `params` must come from this library and `out` point to 15 writable values.
 */
enum PlcStatus plc_params_coefficients(const struct PlcParams *params, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLC_MIMO_H */
