#ifndef CMGAI_H
#define CMGAI_H

#include <stdbool.h>
#include <stddef.h>

/**
 * Result codes. Values 2 to 4 match the command-line exit codes.
 */
typedef enum CmgaiStatus {
  CMGAI_STATUS_OK = 0,
  CMGAI_STATUS_NULL_POINTER = 1,
  CMGAI_STATUS_VALIDATION = 2,
  CMGAI_STATUS_DIVERGED = 3,
  CMGAI_STATUS_IO = 4,
  CMGAI_STATUS_BUFFER_TOO_SMALL = 5,
  CMGAI_STATUS_PANIC = 6,
} CmgaiStatus;

/**
 * A trained (or loaded) transport model.
 */
typedef struct CmgaiModel CmgaiModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next `cmgai_*` call on the same thread.
 */
const char *cmgai_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cmgai_version(void);

/**
 * Loads a model JSON written by `cmgai train` or `cmgai_model_save`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CmgaiStatus cmgai_model_load(const char *path, struct CmgaiModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum CmgaiStatus cmgai_model_save(const struct CmgaiModel *model, const char *path);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `cmgai_model_load` and not be used afterwards.
 */
void cmgai_model_free(struct CmgaiModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum CmgaiStatus cmgai_model_is_trained(const struct CmgaiModel *model, bool *out);

/**
 * Generates the mean curve or field at a raw condition.
 *
 * Values (stresses or field entries) go to `values`; for curve models the
 * matching strains go to `strains` when it is non-null. `len` receives the
 * number of entries. If `capacity` is too small nothing is written except
 * `len` and `CMGAI_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `model` must be a live handle, `values` (and `strains` if non-null) must
 * hold `capacity` doubles, `len` must be writable.
 */
enum CmgaiStatus cmgai_generate_mean(const struct CmgaiModel *model,
                                     double condition,
                                     double *strains,
                                     double *values,
                                     size_t capacity,
                                     size_t *len);

/**
 * Runs the full pipeline from a JSON config file and returns the report
 * JSON through `report`, to be released with `cmgai_string_free`.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `report` writable.
 */
enum CmgaiStatus cmgai_run_experiment(const char *config_path, char **report);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void cmgai_string_free(char *s);

/**
 * Exact Monge assignment between two uniform point sets of `n` points in
 * `dim` dimensions (row-major). Writes `n` target indices to `assignment`
 * and the transport cost to `cost`.
 *
 * # Safety
 * `src` and `dst` must hold `n * dim` doubles, `assignment` `n` entries,
 * and `cost` must be writable.
 */
enum CmgaiStatus cmgai_solve_monge(const double *src,
                                   const double *dst,
                                   size_t n,
                                   size_t dim,
                                   size_t *assignment,
                                   double *cost);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMGAI_H */
