/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef S2F_H
#define S2F_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum S2fStatus {
  S2F_STATUS_OK = 0,
  S2F_STATUS_NULL_ARG = 1,
  S2F_STATUS_UTF8 = 2,
  S2F_STATUS_IO = 3,
  S2F_STATUS_CHECKPOINT = 4,
  S2F_STATUS_PARSE = 5,
  S2F_STATUS_CONFIG = 6,
  S2F_STATUS_PANIC = 7,
} S2fStatus;

/**
 * A loaded model and the decoding settings stored with it.
 */
typedef struct S2fModel S2fModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint. On success `*out` owns a new model.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum S2fStatus s2f_model_load(const char *path, struct S2fModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`s2f_model_load`] and not be used afterwards.
 */
void s2f_model_free(struct S2fModel *model);

/**
 * Number of entity types the model predicts, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live model.
 */
size_t s2f_model_num_types(const struct S2fModel *model);

/**
 * Runs the model over JSON-lines input (`{"tokens": [...]}` per line; any
 * `entities` are ignored) and writes the same records with predicted
 * entities to `*out`. A `threshold` outside `[0, 1)` keeps the stored one.
 *
 * # Safety
 * `model` must be a live model, `input` a nul-terminated string and `out`
 * a valid pointer.
 */
enum S2fStatus s2f_predict_json(const struct S2fModel *model,
                                const char *input,
                                double threshold,
                                char **out);

/**
 * Generates a synthetic corpus of `sentences` records as JSON lines with
 * the default generator settings.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum S2fStatus s2f_synth_jsonl(uint64_t seed, size_t sentences, char **out);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void s2f_string_free(char *s);

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next call into the library on this thread.
 */
const char *s2f_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* S2F_H */
