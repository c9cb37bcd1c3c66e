#ifndef EVIT_H
#define EVIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EvitStatus {
  EVIT_STATUS_OK = 0,
  EVIT_STATUS_INVALID = 1,
  EVIT_STATUS_FORMAT = 2,
  EVIT_STATUS_UNSUPPORTED = 3,
  EVIT_STATUS_MISMATCH = 4,
  EVIT_STATUS_NUMERICAL = 5,
  EVIT_STATUS_IO = 6,
  EVIT_STATUS_NULL_POINTER = 7,
  EVIT_STATUS_PANIC = 8,
} EvitStatus;

typedef struct EvitFeatures EvitFeatures;

typedef struct EvitIndex EvitIndex;

typedef struct EvitKeySet EvitKeySet;

/**
 * Encoder weights plus the fingerprint of the checkpoint they came from.
 */
typedef struct EvitModel EvitModel;

typedef struct EvitSearchResult EvitSearchResult;

/**
 * Heap bytes owned by the library.
 */
typedef struct EvitBuffer {
  uint8_t *data;
  size_t len;
} EvitBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *evit_last_error(void);

void evit_buffer_free(struct EvitBuffer *buf);

/**
 * Encrypt interleaved RGB pixels (`width * height * 3` bytes) with keys
 * derived from the image and the 32-byte `master` secret.
 */
enum EvitStatus evit_encrypt_rgb(const uint8_t *rgb,
                                 uint32_t width,
                                 uint32_t height,
                                 const uint8_t *master,
                                 uint8_t quality,
                                 struct EvitBuffer *out_jpeg,
                                 struct EvitKeySet **out_keys);

enum EvitStatus evit_keyset_to_json(const struct EvitKeySet *keys, struct EvitBuffer *out_json);

enum EvitStatus evit_keyset_from_json(const uint8_t *json,
                                      size_t len,
                                      struct EvitKeySet **out_keys);

void evit_keyset_free(struct EvitKeySet *keys);

/**
 * Recover the plain JPEG byte-stream.
 */
enum EvitStatus evit_decrypt_to_jpeg(const uint8_t *cipher,
                                     size_t len,
                                     const struct EvitKeySet *keys,
                                     struct EvitBuffer *out_jpeg);

/**
 * Decrypt and decode to interleaved RGB.
 */
enum EvitStatus evit_decrypt_rgb(const uint8_t *cipher,
                                 size_t len,
                                 const struct EvitKeySet *keys,
                                 struct EvitBuffer *out_rgb,
                                 uint32_t *out_width,
                                 uint32_t *out_height);

/**
 * Cipher-domain features of one image.
 */
enum EvitStatus evit_extract(const uint8_t *cipher,
                             size_t len,
                             const char *image_id,
                             struct EvitFeatures **out_features);

size_t evit_features_block_count(const struct EvitFeatures *f);

/**
 * Copy the 522 global Huffman-row counts into `out_counts` (length `len`).
 */
enum EvitStatus evit_features_global(const struct EvitFeatures *f,
                                     uint32_t *out_counts,
                                     size_t len);

void evit_features_free(struct EvitFeatures *f);

enum EvitStatus evit_model_load(const char *path, struct EvitModel **out_model);

size_t evit_model_dim(const struct EvitModel *m);

void evit_model_free(struct EvitModel *m);

/**
 * Unit-norm representation of `f` written to `out_vec` (length `evit_model_dim`).
 */
enum EvitStatus evit_embed(const struct EvitModel *m,
                           const struct EvitFeatures *f,
                           float *out_vec,
                           size_t len);

enum EvitStatus evit_index_load(const char *path, struct EvitIndex **out_index);

size_t evit_index_len(const struct EvitIndex *ix);

void evit_index_free(struct EvitIndex *ix);

/**
 * Top-`k` matches for a cipher JPEG. Fails with `Mismatch` when the index
 * was built by a different checkpoint.
 */
enum EvitStatus evit_search(const struct EvitIndex *ix,
                            const struct EvitModel *m,
                            const uint8_t *cipher,
                            size_t len,
                            size_t k,
                            struct EvitSearchResult **out_result);

size_t evit_result_len(const struct EvitSearchResult *r);

/**
 * Id at rank `i` (0 = best), or NULL when out of range. Owned by the result.
 */
const char *evit_result_id(const struct EvitSearchResult *r, size_t i);

/**
 * Cosine score at rank `i`, NaN when out of range.
 */
double evit_result_score(const struct EvitSearchResult *r, size_t i);

/**
 * Wall-clock seconds for extraction, forward pass and ranking.
 */
double evit_result_seconds(const struct EvitSearchResult *r);

void evit_result_free(struct EvitSearchResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVIT_H */
