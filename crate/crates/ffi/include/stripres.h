#ifndef STRIPRES_H
#define STRIPRES_H

#include <stddef.h>
#include <stdint.h>

// Status of an FFI call. Values 2 to 4 match the CLI exit codes.
typedef enum StripresStatus {
  STRIPRES_STATUS_OK = 0,
  STRIPRES_STATUS_INVALID_ARGUMENT = 1,
  STRIPRES_STATUS_CONFIG = 2,
  STRIPRES_STATUS_ASSUMPTION = 3,
  STRIPRES_STATUS_NUMERICAL = 4,
  STRIPRES_STATUS_PANIC = 5,
} StripresStatus;

// Opaque result of a completed run.
typedef struct StripresRun StripresRun;

// One located resonance with its interaction-matrix prediction.
typedef struct StripresRoot {
  double re;
  double im;
  uint32_t multiplicity;
  double predicted_re;
  double predicted_im;
  // |lambda - lambda0 - Lambda| against the nearest prediction.
  double residual;
} StripresRoot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parse `config_json`, run the configured sweep with up to `jobs` parallel
// entries and store the result in `*out`. `*out` is set to null on failure.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` a valid pointer.
enum StripresStatus stripres_run_json(const char *config_json,
                                      uint32_t jobs,
                                      struct StripresRun **out);

// Release a run. Null is ignored.
//
// # Safety
// `run` must be null or a handle from `stripres_run_json` not yet freed.
void stripres_run_free(struct StripresRun *run);

// Unperturbed eigenvalue lambda0, or NaN for a null handle.
//
// # Safety
// `run` must be null or a live handle.
double stripres_run_lambda0(const struct StripresRun *run);

// Total number N of bound states at lambda0 (0 for a null handle).
//
// # Safety
// `run` must be null or a live handle.
size_t stripres_run_bound_states(const struct StripresRun *run);

// Number of solved spacing entries.
//
// # Safety
// `run` must be null or a live handle.
size_t stripres_run_spacings(const struct StripresRun *run);

// Smallness scale eta of spacing entry `entry`, or NaN when out of range.
//
// # Safety
// `run` must be null or a live handle.
double stripres_run_eta(const struct StripresRun *run, size_t entry);

// Number of located roots of spacing entry `entry` (0 when out of range).
//
// # Safety
// `run` must be null or a live handle.
size_t stripres_run_root_count(const struct StripresRun *run, size_t entry);

// Copy root `index` of spacing entry `entry` into `*out`.
//
// # Safety
// `run` must be null or a live handle and `out` a valid pointer.
enum StripresStatus stripres_run_root(const struct StripresRun *run,
                                      size_t entry,
                                      size_t index,
                                      struct StripresRoot *out);

// Fitted slope of log max|lambda - lambda0| against the spacing; NaN when no fit was made.
//
// # Safety
// `run` must be null or a live handle.
double stripres_run_rate_slope(const struct StripresRun *run);

// 1 when every built-in check passed, 0 otherwise.
//
// # Safety
// `run` must be null or a live handle.
int32_t stripres_run_checks_passed(const struct StripresRun *run);

// Write all artifacts of the run into directory `dir`, creating it if needed.
//
// # Safety
// `run` must be a live handle and `dir` a NUL-terminated string.
enum StripresStatus stripres_run_write(const struct StripresRun *run, const char *dir);

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *stripres_last_error(void);

// Library version as a static NUL-terminated string.
const char *stripres_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRIPRES_H */
