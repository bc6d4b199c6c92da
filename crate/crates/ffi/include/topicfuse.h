#ifndef TOPICFUSE_H
#define TOPICFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TfStatus {
  TF_STATUS_OK = 0,
  TF_STATUS_NULL_POINTER = 1,
  TF_STATUS_INVALID_UTF8 = 2,
  TF_STATUS_IO = 3,
  TF_STATUS_PARSE = 4,
  TF_STATUS_INVALID_ARGUMENT = 5,
  TF_STATUS_SHAPE = 6,
  TF_STATUS_MODEL_FORMAT = 7,
  TF_STATUS_UNLABELED = 8,
  TF_STATUS_PANIC = 9,
} TfStatus;

/**
 * Labelled exemplar embeddings for nearest-neighbour classification.
 */
typedef struct TfIndex TfIndex;

/**
 * A trained fusion model.
 */
typedef struct TfModel TfModel;

/**
 * A trained LDA topic model.
 */
typedef struct TfTopics TfTopics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *tf_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void tf_string_free(char *s);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TfStatus tf_model_load(const char *path, struct TfModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`tf_model_load`] not yet freed.
 */
void tf_model_free(struct TfModel *model);

/**
 * Embedding width, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
uintptr_t tf_model_embed_dim(const struct TfModel *model);

/**
 * Embeds one document given as a corpus JSON line (`id`, `text`,
 * `metadata`) into `out`, which must hold exactly `out_len ==
 * tf_model_embed_dim(model)` values.
 *
 * # Safety
 * Pointers must be valid; `out` must point to `out_len` writable doubles.
 */
enum TfStatus tf_model_embed_json(const struct TfModel *model,
                                  const char *document_json,
                                  double *out,
                                  uintptr_t out_len);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TfStatus tf_topics_load(const char *path, struct TfTopics **out);

/**
 * # Safety
 * `topics` must be NULL or a handle from [`tf_topics_load`] not yet freed.
 */
void tf_topics_free(struct TfTopics *topics);

/**
 * Number of topics, or 0 for a NULL handle.
 *
 * # Safety
 * `topics` must be NULL or a live handle.
 */
uintptr_t tf_topics_num_topics(const struct TfTopics *topics);

/**
 * Fold-in topic distribution of one document. The text is tokenized with
 * the vocabulary of `model`, which must be the one the topic model was
 * trained on. `out` receives `tf_topics_num_topics(topics)` values.
 *
 * # Safety
 * Pointers must be valid; `out` must point to `out_len` writable doubles.
 */
enum TfStatus tf_topics_infer_json(const struct TfTopics *topics,
                                   const struct TfModel *model,
                                   const char *document_json,
                                   uintptr_t fold_in_iterations,
                                   uint64_t seed,
                                   double *out,
                                   uintptr_t out_len);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum TfStatus tf_index_new(uintptr_t dim, struct TfIndex **out);

/**
 * # Safety
 * `index` must be NULL or a handle from [`tf_index_new`] not yet freed.
 */
void tf_index_free(struct TfIndex *index);

/**
 * # Safety
 * `index` must be NULL or a live handle.
 */
uintptr_t tf_index_len(const struct TfIndex *index);

/**
 * Adds one labelled exemplar of width `dim`.
 *
 * # Safety
 * Pointers must be valid; `embedding` must point to `dim` doubles.
 */
enum TfStatus tf_index_add(struct TfIndex *index,
                           const char *id,
                           const char *label,
                           const double *embedding,
                           uintptr_t dim);

/**
 * KNN label for `query`. `query_id` may be NULL; when it names an exemplar,
 * that exemplar is not its own neighbour. The label is written to
 * `*out_label` and must be released with [`tf_string_free`].
 *
 * # Safety
 * Pointers must be valid; `query` must point to `dim` doubles.
 */
enum TfStatus tf_index_classify(const struct TfIndex *index,
                                const char *query_id,
                                const double *query,
                                uintptr_t dim,
                                uintptr_t k,
                                char **out_label);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPICFUSE_H */
