#ifndef RAGCAP_H
#define RAGCAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RagcapStatus {
  RAGCAP_STATUS_OK = 0,
  RAGCAP_STATUS_NULL_POINTER = 1,
  RAGCAP_STATUS_INVALID_ARGUMENT = 2,
  RAGCAP_STATUS_DATA_ERROR = 3,
  RAGCAP_STATUS_NUMERIC_ERROR = 4,
  RAGCAP_STATUS_INVALID_UTF8 = 5,
  RAGCAP_STATUS_PANIC = 6,
} RagcapStatus;

/**
 * Caption datastore loaded from disk, with its tokenizer.
 */
typedef struct RagcapDatastore RagcapDatastore;

/**
 * Nearest-neighbor index (flat or inverted-file).
 */
typedef struct RagcapIndex RagcapIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. Caller frees it
 * with [`ragcap_string_free`].
 */
char *ragcap_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void ragcap_string_free(char *s);

/**
 * Builds an exact index over `n` row-major vectors of width `dim`.
 * `ids` may be NULL, in which case row numbers are used.
 *
 * # Safety
 * `vectors` must hold `n * dim` doubles, `ids` (if not NULL) `n` values,
 * and `out` must be writable.
 */
enum RagcapStatus ragcap_flat_index_build(size_t dim,
                                          size_t n,
                                          const double *vectors,
                                          const uint64_t *ids,
                                          struct RagcapIndex **out);

/**
 * Trains an inverted-file index with `n_clusters` k-means cells.
 *
 * # Safety
 * Same as [`ragcap_flat_index_build`].
 */
enum RagcapStatus ragcap_ivf_index_build(size_t dim,
                                         size_t n,
                                         const double *vectors,
                                         const uint64_t *ids,
                                         size_t n_clusters,
                                         uint64_t seed,
                                         size_t iters,
                                         struct RagcapIndex **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum RagcapStatus ragcap_index_load(const char *path, struct RagcapIndex **out);

/**
 * # Safety
 * `index` must be a live handle and `path` a NUL-terminated string.
 */
enum RagcapStatus ragcap_index_save(const struct RagcapIndex *index, const char *path);

/**
 * Number of vectors in the index; 0 for NULL.
 *
 * # Safety
 * `index` must be NULL or a live handle.
 */
size_t ragcap_index_len(const struct RagcapIndex *index);

/**
 * Top-`k` search. `out_ids` and `out_scores` need room for `k` entries;
 * `out_len` receives the number written. `nprobe` is ignored by flat indexes.
 *
 * # Safety
 * `query` must hold `dim` doubles and the output buffers must be writable.
 */
enum RagcapStatus ragcap_index_search(const struct RagcapIndex *index,
                                      const double *query,
                                      size_t dim,
                                      size_t k,
                                      size_t nprobe,
                                      uint64_t *out_ids,
                                      double *out_scores,
                                      size_t *out_len);

/**
 * # Safety
 * `index` must be NULL or a handle not yet freed.
 */
void ragcap_index_free(struct RagcapIndex *index);

/**
 * Loads a datastore directory written by `ragcap store build`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` writable.
 */
enum RagcapStatus ragcap_datastore_load(const char *dir, struct RagcapDatastore **out);

/**
 * # Safety
 * `store` must be NULL or a live handle.
 */
size_t ragcap_datastore_len(const struct RagcapDatastore *store);

/**
 * Retrieves the `k` captions closest to an image embedding.
 *
 * # Safety
 * As for [`ragcap_index_search`].
 */
enum RagcapStatus ragcap_datastore_retrieve(const struct RagcapDatastore *store,
                                            const double *embedding,
                                            size_t dim,
                                            size_t k,
                                            uint64_t *out_ids,
                                            double *out_scores,
                                            size_t *out_len);

/**
 * Caption text of record `id`; caller frees `*out`.
 *
 * # Safety
 * `store` must be a live handle and `out` writable.
 */
enum RagcapStatus ragcap_datastore_caption(const struct RagcapDatastore *store,
                                           uint64_t id,
                                           char **out);

/**
 * # Safety
 * `store` must be NULL or a handle not yet freed.
 */
void ragcap_datastore_free(struct RagcapDatastore *store);

/**
 * Renders the retrieval prompt for `n` captions; caller frees `*out`.
 *
 * # Safety
 * `captions` must hold `n` NUL-terminated strings and `out` be writable.
 */
enum RagcapStatus ragcap_build_prompt(const char *const *captions, size_t n, char **out);

/**
 * Trainable cross-attention parameter count.
 *
 * # Safety
 * `out` must be writable.
 */
enum RagcapStatus ragcap_count_params(size_t layers,
                                      size_t heads,
                                      size_t d_model,
                                      size_t d_encoder,
                                      size_t d,
                                      uint64_t *out);

/**
 * Corpus BLEU-4. `refs` is row-major: `refs_per_example` references for
 * each of the `n` hypotheses.
 *
 * # Safety
 * `hyps` must hold `n` strings, `refs` `n * refs_per_example`, `out` writable.
 */
enum RagcapStatus ragcap_bleu4(const char *const *hyps,
                               size_t n,
                               const char *const *refs,
                               size_t refs_per_example,
                               double *out);

/**
 * Corpus CIDEr, same layout as [`ragcap_bleu4`].
 *
 * # Safety
 * As for [`ragcap_bleu4`].
 */
enum RagcapStatus ragcap_cider(const char *const *hyps,
                               size_t n,
                               const char *const *refs,
                               size_t refs_per_example,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAGCAP_H */
