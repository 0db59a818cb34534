/* C interface for the vix embedding and retrieval library. */

#ifndef VIX_H
#define VIX_H

/* Generated by cbindgen from the vix-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a fallible call.
 */
typedef enum VixStatus {
  VIX_STATUS_OK = 0,
  /**
   * File read or write failed.
   */
  VIX_STATUS_IO = 1,
  /**
   * A file exists but is not in the expected format.
   */
  VIX_STATUS_FORMAT = 2,
  /**
   * Inputs are structurally inconsistent (dimensions, id ranges).
   */
  VIX_STATUS_DATA = 3,
  /**
   * A parameter value is out of range or unparsable.
   */
  VIX_STATUS_CONFIG = 4,
  /**
   * A computation produced a non-finite value.
   */
  VIX_STATUS_NUMERIC = 5,
  /**
   * A required pointer argument was null.
   */
  VIX_STATUS_NULL_ARGUMENT = 6,
  /**
   * A string argument was not valid UTF-8.
   */
  VIX_STATUS_INVALID_UTF8 = 7,
  /**
   * The library caught an internal panic.
   */
  VIX_STATUS_PANIC = 8,
} VixStatus;

/**
 * Which side of the corpus a text or image bank belongs to. Functions
 * take this as an `int` so that out-of-range values can be rejected
 * instead of being undefined behavior.
 */
typedef enum VixSide {
  VIX_SIDE_QUERY = 0,
  VIX_SIDE_LABEL = 1,
} VixSide;

/**
 * Frozen image vectors keyed by item index.
 */
typedef struct VixBank VixBank;

/**
 * Unit-norm embedding rows ready for exact top-k search.
 */
typedef struct VixIndex VixIndex;

/**
 * A loaded encoder: parameters, vocabulary, and prompt settings.
 */
typedef struct VixModel VixModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The library version as a static NUL-terminated string.
 */
const char *vix_version(void);

/**
 * The checkpoint file format this library reads.
 */
uint32_t vix_checkpoint_format(void);

/**
 * The image bank file format this library reads.
 */
uint32_t vix_image_bank_format(void);

/**
 * Diagnostic for the most recent failing call on this thread. The pointer
 * stays valid until the next failing call on the same thread. Empty when
 * no call has failed yet.
 */
const char *vix_last_error(void);

/**
 * Load a checkpoint and its vocabulary. `mode` names the prompt template
 * (for example "decoder-fused"); `max_len` is the assembled prompt length
 * and `image_cap` the most images taken per item. On success `*out` owns
 * the model; release it with [`vix_model_free`].
 *
 * # Safety
 * `checkpoint_path`, `vocab_path`, and `mode` must be NUL-terminated
 * strings; `out` must be a valid pointer.
 */
enum VixStatus vix_model_open(const char *checkpoint_path,
                              const char *vocab_path,
                              const char *mode,
                              size_t max_len,
                              size_t image_cap,
                              struct VixModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a pointer returned by [`vix_model_open`] that
 * has not been freed yet.
 */
void vix_model_free(struct VixModel *model);

/**
 * Embedding width of a model, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t vix_model_dim(const struct VixModel *model);

/**
 * Raw image width the model projects from, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t vix_model_image_dim(const struct VixModel *model);

/**
 * Load an image bank file for one corpus side. On success `*out` owns the
 * bank; release it with [`vix_bank_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum VixStatus vix_bank_open(const char *path, int side, struct VixBank **out);

/**
 * Release a bank. Null is ignored.
 *
 * # Safety
 * `bank` must be null or a pointer returned by [`vix_bank_open`] that has
 * not been freed yet.
 */
void vix_bank_free(struct VixBank *bank);

/**
 * Number of items with stored vectors, or 0 for null.
 *
 * # Safety
 * `bank` must be null or a live bank handle.
 */
size_t vix_bank_items(const struct VixBank *bank);

/**
 * Embed `num_texts` texts into `out`, which must hold
 * `num_texts * vix_model_dim(model)` doubles, written row-major, one
 * unit-norm row per text. Text `i` is treated as item `i` when pulling
 * vectors from `bank`; pass a null `bank` to embed from text alone.
 * `side` says which corpus side the texts (and bank) belong to.
 *
 * # Safety
 * `model` must be a live model handle; `texts` must point to `num_texts`
 * NUL-terminated strings; `bank`, when non-null, must be a live bank
 * handle; `out` must have room for `num_texts * vix_model_dim(model)`
 * doubles.
 */
enum VixStatus vix_embed(const struct VixModel *model,
                         const char *const *texts,
                         size_t num_texts,
                         int side,
                         const struct VixBank *bank,
                         double *out);

/**
 * Build a search index over `num_rows` unit-norm rows of `dim` doubles.
 * `ids`, when non-null, holds `num_rows` item ids reported back by
 * searches (they should be distinct; ties rank by ascending id); a null
 * `ids` numbers the rows 0..num_rows. On success `*out` owns the index;
 * release it with [`vix_index_free`].
 *
 * # Safety
 * `rows` must point to `num_rows * dim` doubles; `ids` must be null or
 * point to `num_rows` ids; `out` must be a valid pointer.
 */
enum VixStatus vix_index_build(const double *rows,
                               size_t num_rows,
                               size_t dim,
                               const uint64_t *ids,
                               size_t block_size,
                               struct VixIndex **out);

/**
 * Release an index. Null is ignored.
 *
 * # Safety
 * `index` must be null or a pointer returned by [`vix_index_build`] that
 * has not been freed yet.
 */
void vix_index_free(struct VixIndex *index);

/**
 * Number of indexed rows, or 0 for null.
 *
 * # Safety
 * `index` must be null or a live index handle.
 */
size_t vix_index_len(const struct VixIndex *index);

/**
 * Exact top-`k` rows by inner product with `query`, highest score first,
 * ties broken by ascending id. Writes `min(k, vix_index_len(index))`
 * entries into `out_ids` and `out_scores` and stores that count in
 * `*out_count`.
 *
 * # Safety
 * `index` must be a live index handle; `query` must point to `dim`
 * doubles; `out_ids` and `out_scores` must have room for `k` entries;
 * `out_count` must be a valid pointer.
 */
enum VixStatus vix_index_search(const struct VixIndex *index,
                                const double *query,
                                size_t dim,
                                size_t k,
                                uint64_t *out_ids,
                                double *out_scores,
                                size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIX_H */
