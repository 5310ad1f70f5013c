/* C interface for the procedural reasoning library. */

#ifndef PRN_H
#define PRN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum PrnStatus {
  PRN_OK = 0,
  PRN_NULL_POINTER = 1,
  PRN_INVALID_ARGUMENT = 2,
  PRN_DATA_ERROR = 3,
  PRN_IO_ERROR = 4,
  PRN_RUNTIME_ERROR = 5,
} PrnStatus;

/**
 * Opaque dataset handle: recipes plus validated question instances.
 */
typedef struct PrnDataset PrnDataset;

/**
 * Opaque image feature store handle.
 */
typedef struct PrnFeatureStore PrnFeatureStore;

/**
 * Opaque model handle restored from a checkpoint.
 */
typedef struct PrnModel PrnModel;

/**
 * Opaque prepared-dataset handle bound to one model and feature store.
 */
typedef struct PrnPrepared PrnPrepared;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *prn_version(void);

/**
 * Message for the most recent error on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *prn_last_error_message(void);

/**
 * Frees a string returned by this library.
 */
void prn_string_free(char *s);

/**
 * Generates a synthetic dataset bundle into `out_dir`. `world_json` may be
 * NULL for the default world configuration.
 */
enum PrnStatus prn_synth_generate(const char *world_json,
                                  uintptr_t n_recipes,
                                  uint64_t seed,
                                  const char *out_dir);

enum PrnStatus prn_feature_store_open(const char *path, struct PrnFeatureStore **out);

void prn_feature_store_free(struct PrnFeatureStore *store);

enum PrnStatus prn_feature_store_len(const struct PrnFeatureStore *store, uintptr_t *out);

enum PrnStatus prn_feature_store_dim(const struct PrnFeatureStore *store, uintptr_t *out);

/**
 * Copies one image's feature vector into `buffer` (length `buffer_len`,
 * which must be at least the store dimension).
 */
enum PrnStatus prn_feature_store_get(const struct PrnFeatureStore *store,
                                     const char *image_id,
                                     float *buffer,
                                     uintptr_t buffer_len);

/**
 * Loads recipes and question instances; `split` may be NULL to keep all
 * records.
 */
enum PrnStatus prn_dataset_load(const char *recipes_path,
                                const char *questions_path,
                                const char *split,
                                struct PrnDataset **out);

void prn_dataset_free(struct PrnDataset *dataset);

enum PrnStatus prn_dataset_len(const struct PrnDataset *dataset, uintptr_t *out);

/**
 * Instance id at `index` as a newly allocated string; free with
 * [`prn_string_free`].
 */
enum PrnStatus prn_dataset_instance_id(const struct PrnDataset *dataset,
                                       uintptr_t index,
                                       char **out);

/**
 * Gold answer index of the instance at `index`.
 */
enum PrnStatus prn_dataset_gold_index(const struct PrnDataset *dataset,
                                      uintptr_t index,
                                      uint32_t *out);

/**
 * Restores a model from a checkpoint archive.
 */
enum PrnStatus prn_model_open(const char *checkpoint_path, struct PrnModel **out);

void prn_model_free(struct PrnModel *model);

/**
 * Number of trainable parameters.
 */
enum PrnStatus prn_model_parameter_count(const struct PrnModel *model, uint64_t *out);

/**
 * Prepares a dataset against a model (entity extraction, feature lookup).
 * The returned handle is only valid with the same model.
 */
enum PrnStatus prn_prepared_create(const struct PrnModel *model,
                                   const struct PrnDataset *dataset,
                                   const struct PrnFeatureStore *store,
                                   struct PrnPrepared **out);

void prn_prepared_free(struct PrnPrepared *prepared);

/**
 * Scores the instance at `index`: writes the predicted candidate index and
 * the four cosine scores.
 */
enum PrnStatus prn_model_predict(const struct PrnModel *model,
                                 const struct PrnPrepared *prepared,
                                 uintptr_t index,
                                 uint32_t *out_predicted,
                                 double *out_scores);

/**
 * Evaluates the whole prepared dataset and returns the report as a JSON
 * string; free with [`prn_string_free`].
 */
enum PrnStatus prn_model_evaluate_json(const struct PrnModel *model,
                                       const struct PrnPrepared *prepared,
                                       char **out_json);

/**
 * Predicts one instance with the visual-distance heuristic.
 * `coherence_policy`: 0 = max distance (most inconsistent), 1 = min.
 */
enum PrnStatus prn_hasty_predict(const struct PrnDataset *dataset,
                                 const struct PrnFeatureStore *store,
                                 uintptr_t index,
                                 uint32_t coherence_policy,
                                 uint32_t *out_predicted);

/**
 * Evaluates the heuristic over the whole dataset; returns report JSON.
 */
enum PrnStatus prn_hasty_evaluate_json(const struct PrnDataset *dataset,
                                       const struct PrnFeatureStore *store,
                                       uint32_t coherence_policy,
                                       char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRN_H */
