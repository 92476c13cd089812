/* C ABI for the edgegen adversarial weather search engine.
 * Generated by cbindgen from crates/ffi; do not edit by hand. */

#ifndef EDGEGEN_H
#define EDGEGEN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  /**
   * Success.
   */
  EG_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  EG_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  EG_STATUS_UTF8 = 2,
  /**
   * A configuration value is out of its documented domain.
   */
  EG_STATUS_INVALID_CONFIG = 3,
  /**
   * A function argument is out of its documented domain.
   */
  EG_STATUS_INVALID_ARGUMENT = 4,
  /**
   * A scene failed its structural checks.
   */
  EG_STATUS_INVALID_SCENE = 5,
  /**
   * A file declares a schema version this build does not understand.
   */
  EG_STATUS_UNSUPPORTED_SCHEMA = 6,
  /**
   * JSON that does not parse or does not match the expected shape.
   */
  EG_STATUS_PARSE = 7,
  /**
   * An I/O failure.
   */
  EG_STATUS_IO = 8,
  /**
   * A NaN or infinity surfaced mid-computation.
   */
  EG_STATUS_NON_FINITE = 9,
  /**
   * Replay/report verification found inconsistent artifacts.
   */
  EG_STATUS_MISMATCH = 10,
  /**
   * An internal panic was caught at the boundary.
   */
  EG_STATUS_PANIC = 11,
} EgStatus;

/**
 * Opaque scene catalog handle.
 *
 * Tracks the file it was loaded from or last saved to; training and
 * evaluation record that path (and its digest) in their manifests, so they
 * require a file-backed catalog.
 */
typedef struct EgCatalog EgCatalog;

/**
 * Opaque harness configuration handle.
 */
typedef struct EgConfig EgConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the library version as a static string; do not free it.
 */
const char *eg_version(void);

/**
 * Returns the error message of the current thread's most recent failed call
 * as a freshly allocated string (free with `eg_string_free`), or NULL if the
 * most recent call succeeded.
 */
char *eg_last_error_message(void);

/**
 * Frees a string returned by this library. NULL is a no-op.
 *
 * # Safety
 * `s` must be a pointer previously returned by this library's string-output
 * functions, and must not be used afterwards.
 */
void eg_string_free(char *s);

/**
 * Creates a config with every section at its documented default.
 */
EgConfig *eg_config_default(void);

/**
 * Loads and validates a config JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
EgStatus eg_config_from_json_file(const char *path, EgConfig **out);

/**
 * Serializes a config back to JSON (free the string with `eg_string_free`).
 *
 * # Safety
 * `cfg` must be a live config handle; `out_json` must be a valid pointer.
 */
EgStatus eg_config_to_json(const EgConfig *cfg, char **out_json);

/**
 * Destroys a config handle. NULL is a no-op.
 *
 * # Safety
 * `cfg` must be NULL or a live config handle; it must not be used afterwards.
 */
void eg_config_free(EgConfig *cfg);

/**
 * Generates a scene catalog from the config's generator section.
 *
 * The handle has no backing file until `eg_catalog_save`.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be a valid pointer.
 */
EgStatus eg_catalog_generate(const EgConfig *cfg, uint64_t seed, EgCatalog **out);

/**
 * Loads and validates a catalog JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
EgStatus eg_catalog_load(const char *path, EgCatalog **out);

/**
 * Writes the catalog to a JSON file, which becomes its backing file.
 *
 * # Safety
 * `cat` must be a live catalog handle; `path` a NUL-terminated string.
 */
EgStatus eg_catalog_save(EgCatalog *cat, const char *path);

/**
 * Writes the number of scenes to `out_len`.
 *
 * # Safety
 * `cat` must be a live catalog handle; `out_len` must be a valid pointer.
 */
EgStatus eg_catalog_len(const EgCatalog *cat, size_t *out_len);

/**
 * Destroys a catalog handle. NULL is a no-op.
 *
 * # Safety
 * `cat` must be NULL or a live catalog handle; it must not be used afterwards.
 */
void eg_catalog_free(EgCatalog *cat);

/**
 * Runs one episode and returns the full record (rows, totals, failure mode)
 * as a JSON string (free with `eg_string_free`).
 *
 * `agent` is `"clear"`, `"random"` (seeded by `agent_seed`) or `"policy"`
 * (requires `checkpoint_path`; acts at the policy mean). `checkpoint_path`
 * may be NULL for the baselines.
 *
 * # Safety
 * `cfg`/`cat` must be live handles; strings NUL-terminated; `out_json` valid.
 */
EgStatus eg_run_episode_json(const EgConfig *cfg,
                             const EgCatalog *cat,
                             size_t scene_index,
                             const char *agent,
                             uint64_t agent_seed,
                             const char *checkpoint_path,
                             char **out_json);

/**
 * Trains a policy into `out_dir` (checkpoint, curve, manifest).
 *
 * `resume_path` may be NULL; `seed_override` may be NULL to use the config's
 * seed. The catalog must be file-backed.
 *
 * # Safety
 * `cfg`/`cat` must be live handles; strings NUL-terminated; `seed_override`
 * NULL or a valid pointer.
 */
EgStatus eg_train(const EgConfig *cfg,
                  const EgCatalog *cat,
                  const char *out_dir,
                  const char *resume_path,
                  const uint64_t *seed_override);

/**
 * Evaluates baselines (and the checkpoint's policy when `checkpoint_path` is
 * non-NULL) into `out_dir` (episode logs, report.json/csv, manifest).
 *
 * # Safety
 * `cfg`/`cat` must be live handles; strings NUL-terminated; `seed_override`
 * NULL or a valid pointer.
 */
EgStatus eg_evaluate(const EgConfig *cfg,
                     const EgCatalog *cat,
                     const char *checkpoint_path,
                     const char *out_dir,
                     const uint64_t *seed_override);

/**
 * Re-verifies an episode log; writes counts on success.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_episodes`/`out_rows` must be valid
 * pointers.
 */
EgStatus eg_replay(const char *path, size_t *out_episodes, size_t *out_rows);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGEGEN_H */
