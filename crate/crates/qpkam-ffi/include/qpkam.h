#ifndef QPKAM_FFI_H
#define QPKAM_FFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes; the first four match the exit codes of the command line tool.
 */
typedef enum QpkamStatus {
  QPKAM_STATUS_OK = 0,
  QPKAM_STATUS_CONFIG = 2,
  QPKAM_STATUS_COMPUTE = 3,
  QPKAM_STATUS_VERIFY_FAILED = 4,
  QPKAM_STATUS_NULL_POINTER = 10,
  QPKAM_STATUS_INVALID_UTF8 = 11,
  QPKAM_STATUS_IO = 12,
  QPKAM_STATUS_OUT_OF_RANGE = 13,
  QPKAM_STATUS_PANIC = 14,
} QpkamStatus;

typedef enum QpkamCommand {
  QPKAM_COMMAND_REDUCE = 0,
  QPKAM_COMMAND_KAM = 1,
  QPKAM_COMMAND_NASHMOSER = 2,
  QPKAM_COMMAND_MEASURE = 3,
  QPKAM_COMMAND_VERIFY = 4,
} QpkamCommand;

/**
 * A validated experiment configuration.
 */
typedef struct QpkamConfig QpkamConfig;

/**
 * A sequence of doubles produced by a run.
 */
typedef struct QpkamSeries QpkamSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the library as a static NUL-terminated string.
 */
const char *qpkam_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the length needed including the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t qpkam_last_error(char *buf, size_t len);

/**
 * Parses and validates a TOML experiment description.
 *
 * # Safety
 * `src` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum QpkamStatus qpkam_config_from_toml(const char *src, struct QpkamConfig **out);

/**
 * Reads a TOML experiment description from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum QpkamStatus qpkam_config_from_file(const char *path, struct QpkamConfig **out);

/**
 * Overrides the seed.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum QpkamStatus qpkam_config_set_seed(struct QpkamConfig *cfg, uint64_t seed);

/**
 * Number of frequency samples of the configured grid.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
size_t qpkam_config_samples(const struct QpkamConfig *cfg);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void qpkam_config_free(struct QpkamConfig *cfg);

/**
 * Runs a subcommand and writes its artifacts into `out_dir`. A failing
 * `verify` returns `QPKAM_STATUS_VERIFY_FAILED`.
 *
 * # Safety
 * `cfg` must be a live handle and `out_dir` a NUL-terminated string.
 */
enum QpkamStatus qpkam_run(const struct QpkamConfig *cfg,
                           enum QpkamCommand cmd,
                           const char *out_dir,
                           uint32_t threads);

/**
 * KAM series `|R_nu|` of one frequency sample: the initial norm followed by
 * the norm after each step.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be valid for a write.
 */
enum QpkamStatus qpkam_kam_norms(const struct QpkamConfig *cfg,
                                 size_t sample,
                                 struct QpkamSeries **out);

/**
 * Newton residuals `|F(U_n)|` of one frequency sample.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be valid for a write.
 */
enum QpkamStatus qpkam_nm_residuals(const struct QpkamConfig *cfg,
                                    size_t sample,
                                    struct QpkamSeries **out);

/**
 * Excluded fractions of the measure sweep, one per configured `gamma`.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be valid for a write.
 */
enum QpkamStatus qpkam_measure_fractions(const struct QpkamConfig *cfg,
                                         uint32_t threads,
                                         struct QpkamSeries **out);

/**
 * # Safety
 * `s` must be null or a live handle.
 */
size_t qpkam_series_len(const struct QpkamSeries *s);

/**
 * Reads entry `i`.
 *
 * # Safety
 * `s` must be a live handle; `value` must be valid for a write.
 */
enum QpkamStatus qpkam_series_get(const struct QpkamSeries *s, size_t i, double *value);

/**
 * Copies up to `len` entries into `buf` and returns the number copied.
 *
 * # Safety
 * `s` must be a live handle; `buf` must be valid for `len` doubles.
 */
size_t qpkam_series_copy(const struct QpkamSeries *s, double *buf, size_t len);

/**
 * # Safety
 * `s` must be null or a handle not yet freed.
 */
void qpkam_series_free(struct QpkamSeries *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPKAM_FFI_H */
