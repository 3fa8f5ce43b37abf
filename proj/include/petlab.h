#ifndef PETLAB_H
#define PETLAB_H

/* C interface to the retrieval fine-tuning library. All entry points are
 * thread-safe with respect to error reporting (the last error message is
 * thread-local) as long as each handle is used from one thread at a time.
 *
 * Functions return PETLAB_OK on success; on failure they return the error
 * category and leave a human-readable message in petlab_last_error().
 * Output parameters are written only on success. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum petlab_status {
    PETLAB_OK = 0,
    PETLAB_ERR_INPUT = 1,    /* malformed runtime data */
    PETLAB_ERR_CONFIG = 2,   /* invalid or inconsistent configuration */
    PETLAB_ERR_IO = 3,       /* filesystem or serialization failure */
    PETLAB_ERR_NUMERIC = 4,  /* non-finite values or diverged training */
    PETLAB_ERR_INTERNAL = 5  /* library bug */
} petlab_status;

/* Opaque handles. */
typedef struct petlab_config petlab_config; /* one run configuration */
typedef struct petlab_result petlab_result; /* JSON report of a run or sweep */

/* Library version as "major.minor.patch". */
const char* petlab_version(void);

/* Stable lowercase name for a status code ("ok", "input", "config", ...). */
const char* petlab_status_name(petlab_status status);

/* Message from the most recent failing call on the calling thread, or ""
 * if the most recent call succeeded. The pointer stays valid until the next
 * library call on the same thread. */
const char* petlab_last_error(void);

/* ---- configuration ------------------------------------------------- */

/* Parses a run configuration from JSON text. Accepts nested objects and
 * flat dotted keys ("optimizer.lr": 0.001); unknown keys are rejected. */
petlab_status petlab_config_parse(const char* json_text, petlab_config** out);

/* Reads the JSON configuration in `path`. */
petlab_status petlab_config_load(const char* path, petlab_config** out);

/* Applies one override. `key` may be dotted ("loss.lambda"); `value` is
 * parsed as JSON, with bare words taken as strings ("mrs_adapter"). */
petlab_status petlab_config_override(petlab_config* cfg, const char* key, const char* value);

/* Canonical JSON for the full configuration (sorted keys, every field).
 * The caller frees *out_json with petlab_string_free(). */
petlab_status petlab_config_dump(const petlab_config* cfg, char** out_json);

void petlab_config_free(petlab_config* cfg);

/* ---- experiments ---------------------------------------------------- */

/* Trains one run: synthesizes or loads the dataset, attaches the tuning
 * strategy, optimizes the retrieval loss, and evaluates the best-validation
 * snapshot on the test split. If checkpoint_path is non-NULL the selected
 * model is saved there. */
petlab_status petlab_train(const petlab_config* cfg, const char* checkpoint_path,
                           petlab_result** out);

/* Runs every configuration k_folds times with reseeded folds; per-config
 * failures are recorded in the report instead of aborting the sweep. If
 * output_dir is non-NULL, results.csv / params_vs_mr.csv / results.json are
 * written there (existing files are renamed to .1, .2, ... first). */
petlab_status petlab_benchmark(const petlab_config* const* cfgs, size_t count,
                               const char* output_dir, petlab_result** out);

/* Compares autodiff gradients of the training loss on one batch against
 * central finite differences over every trainable parameter and writes the
 * maximum relative error. fd_step <= 0 selects the default (1e-5). */
petlab_status petlab_grad_check(const petlab_config* cfg, double fd_step,
                                double* out_max_rel_error);

/* Writes the synthetic dataset described by cfg's dataset.toy block under
 * `dir`: an images/ directory of PPM files, manifest.json and vocab.json. */
petlab_status petlab_make_toy_data(const petlab_config* cfg, const char* dir);

/* Encodes one dataset split ("train", "val" or "test") and writes
 * <tag>_images.csv and <tag>_captions.csv under output_dir. The model comes
 * from checkpoint_path when non-NULL, otherwise it is freshly initialized
 * from the configuration. */
petlab_status petlab_export_embeddings(const petlab_config* cfg, const char* checkpoint_path,
                                       const char* split, const char* output_dir,
                                       const char* tag);

/* ---- results -------------------------------------------------------- */

/* JSON text of the result. The caller frees *out_json with
 * petlab_string_free(). */
petlab_status petlab_result_json(const petlab_result* result, char** out_json);

/* Writes the result JSON to `path` (an existing file is renamed aside). */
petlab_status petlab_result_write(const petlab_result* result, const char* path);

void petlab_result_free(petlab_result* result);

/* Frees strings returned through char** out parameters. */
void petlab_string_free(char* text);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PETLAB_H */
