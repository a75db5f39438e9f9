#ifndef MZLOCK_H
#define MZLOCK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MzStatus {
  MZ_STATUS_OK = 0,
  // Configuration or argument rejected.
  MZ_STATUS_VALIDATION = 1,
  // Simulation or analysis failed.
  MZ_STATUS_RUNTIME = 2,
  MZ_STATUS_IO = 3,
  // A required pointer was null.
  MZ_STATUS_NULL = 4,
  // A Rust panic was caught at the boundary.
  MZ_STATUS_PANIC = 5,
  // Index out of range.
  MZ_STATUS_RANGE = 6,
} MzStatus;

typedef struct MzConfig MzConfig;

typedef struct MzRun MzRun;

typedef struct MzScan MzScan;

// One time-series bin.
typedef struct MzRecord {
  double t_start;
  double duration;
  uint64_t counts_d1;
  uint64_t counts_d2;
  double mean_pd_level;
  bool control_enabled;
  double pm_voltage;
} MzRecord;

// One scan voltage: mean rates (counts/s) and their sample sd.
typedef struct MzFringePoint {
  double voltage;
  double mean_d1;
  double sd_d1;
  double mean_d2;
  double sd_d2;
} MzFringePoint;

// Fit of `A (1 + visibility cos(pi V / v_pi + phi0))`.
typedef struct MzFit {
  double amplitude;
  double v_pi;
  double phi0;
  double visibility;
  double r_squared;
  double visibility_sigma;
  double v_pi_sigma;
  double chi_squared;
} MzFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mz_version(void);

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next mzlock call on this thread.
const char *mz_last_error_message(void);

// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum MzStatus mz_config_default(struct MzConfig **out);

// Parse `key = value` configuration text on top of the defaults.
//
// # Safety
// `config_text` must be a NUL-terminated string; `out` must be writable.
enum MzStatus mz_config_parse(const char *config_text, struct MzConfig **out);

// Set one configuration key. The handle is left unchanged if the result
// would not validate.
//
// # Safety
// `cfg` must come from this library; `key` and `value` must be
// NUL-terminated strings.
enum MzStatus mz_config_set(struct MzConfig *cfg, const char *key, const char *value);

// # Safety
// `cfg` must come from this library.
enum MzStatus mz_config_set_seed(struct MzConfig *cfg, uint64_t seed);

// # Safety
// `cfg` must come from this library or be null; it is invalid afterwards.
void mz_config_free(struct MzConfig *cfg);

// Simulate the configured timeline. A lost lock is reported through
// `mz_run_lock_lost`, not as a failure.
//
// # Safety
// `cfg` must come from this library; `out` must be writable.
enum MzStatus mz_run_scenario(const struct MzConfig *cfg, struct MzRun **out);

// Number of bins, or 0 for a null handle.
//
// # Safety
// `run` must come from this library or be null.
size_t mz_run_len(const struct MzRun *run);

// # Safety
// `run` must come from this library or be null.
bool mz_run_lock_lost(const struct MzRun *run);

// # Safety
// `run` must come from this library; `out` must be writable.
enum MzStatus mz_run_record(const struct MzRun *run, size_t index, struct MzRecord *out);

// Write the time series to `path` and, if `events_path` is non-null, the
// event log to `events_path`.
//
// # Safety
// `run` must come from this library; paths must be NUL-terminated.
enum MzStatus mz_run_write_csv(const struct MzRun *run, const char *path, const char *events_path);

// # Safety
// `run` must come from this library or be null; it is invalid afterwards.
void mz_run_free(struct MzRun *run);

// Lock and step the modulator through the configured scan. An aborted
// scan still yields a handle with the points taken so far.
//
// # Safety
// `cfg` must come from this library; `out` must be writable.
enum MzStatus mz_scan_voltage(const struct MzConfig *cfg, struct MzScan **out);

// # Safety
// `scan` must come from this library or be null.
size_t mz_scan_len(const struct MzScan *scan);

// # Safety
// `scan` must come from this library or be null.
bool mz_scan_aborted(const struct MzScan *scan);

// # Safety
// `scan` must come from this library; `out` must be writable.
enum MzStatus mz_scan_point(const struct MzScan *scan, size_t index, struct MzFringePoint *out);

// Fringe fit of detector 1 or 2. Fails with `Runtime` when the scan was
// aborted before a fit was possible.
//
// # Safety
// `scan` must come from this library; `out` must be writable.
enum MzStatus mz_scan_fit(const struct MzScan *scan, uint32_t detector, struct MzFit *out);

// # Safety
// `scan` must come from this library; `path` must be NUL-terminated.
enum MzStatus mz_scan_write_csv(const struct MzScan *scan, const char *path);

// # Safety
// `scan` must come from this library or be null; it is invalid afterwards.
void mz_scan_free(struct MzScan *scan);

// Raw visibility of two count rates and its Poisson uncertainty.
// `uncertainty` may be null.
//
// # Safety
// `value` must be writable; `uncertainty` must be writable or null.
enum MzStatus mz_visibility(double c1, double c2, double *value, double *uncertainty);

// Visibility after subtracting the dark rates.
//
// # Safety
// `value` must be writable; `uncertainty` must be writable or null.
enum MzStatus mz_net_visibility(double c1,
                                double c2,
                                double dark1,
                                double dark2,
                                double *value,
                                double *uncertainty);

// Per-gate click probability for a port receiving `port_fraction` of the
// input light.
//
// # Safety
// `out` must be writable.
enum MzStatus mz_gate_click_probability(double mu,
                                        double post_path_loss_db,
                                        double efficiency,
                                        double dark_prob,
                                        double port_fraction,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MZLOCK_H */
