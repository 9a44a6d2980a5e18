#ifndef CTXWSD_H
#define CTXWSD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * How much surrounding text the encoder sees.
 */
typedef enum CtxwsdContext {
  CTXWSD_CONTEXT_ONE_SENT = 0,
  CTXWSD_CONTEXT_ONE_SENT_ONE_SUR = 1,
} CtxwsdContext;

/**
 * Result of a C API call.
 */
typedef enum CtxwsdStatus {
  CTXWSD_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  CTXWSD_STATUS_NULL_ARGUMENT = 1,
  /**
   * Unreadable file, malformed input or invalid argument.
   */
  CTXWSD_STATUS_INPUT_ERROR = 2,
  /**
   * NaN or infinity in inputs, weights or intermediate values.
   */
  CTXWSD_STATUS_NON_FINITE = 3,
  /**
   * Shapes or configurations that do not fit together.
   */
  CTXWSD_STATUS_CONFIG_MISMATCH = 4,
  /**
   * The head has no parameters for the lexelt and no backoff sense.
   */
  CTXWSD_STATUS_UNSEEN_LEXELT = 5,
  /**
   * The output buffer is too small; the needed size was reported.
   */
  CTXWSD_STATUS_BUFFER_TOO_SMALL = 6,
  CTXWSD_STATUS_PANIC = 7,
} CtxwsdStatus;

/**
 * Encoder weights plus the tokenizer for its vocabulary.
 */
typedef struct CtxwsdEncoder CtxwsdEncoder;

/**
 * A trained head with the sense inventory it was trained against.
 */
typedef struct CtxwsdHead CtxwsdHead;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next API call on the same thread.
 */
const char *ctxwsd_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *ctxwsd_version(void);

/**
 * Loads NTS1 encoder weights and a one-piece-per-line vocabulary.
 *
 * # Safety
 * Path arguments must be NUL-terminated strings; `out_encoder` must be
 * writable.
 */
enum CtxwsdStatus ctxwsd_encoder_load(const char *weights_path,
                                      const char *vocab_path,
                                      bool lowercase,
                                      struct CtxwsdEncoder **out_encoder);

/**
 * # Safety
 * `encoder` must come from [`ctxwsd_encoder_load`] and not be freed twice.
 */
void ctxwsd_encoder_free(struct CtxwsdEncoder *encoder);

/**
 * Number of encoder layers `L`, or 0 for NULL.
 *
 * # Safety
 * `encoder` must be NULL or a live handle.
 */
size_t ctxwsd_encoder_layers(const struct CtxwsdEncoder *encoder);

/**
 * Hidden width `d_model`, or 0 for NULL.
 *
 * # Safety
 * `encoder` must be NULL or a live handle.
 */
size_t ctxwsd_encoder_d_model(const struct CtxwsdEncoder *encoder);

/**
 * Encodes one sentence and writes the `L × d_model` layer vectors of word
 * `target_index` to `out` in row-major order. `left` and `right` are the
 * neighbor sentences and may be NULL with a zero count.
 *
 * # Safety
 * Word arrays must hold the stated number of valid strings; `out` must have
 * room for `out_len` floats.
 */
enum CtxwsdStatus ctxwsd_encoder_features(const struct CtxwsdEncoder *encoder,
                                          const char *const *words,
                                          size_t n_words,
                                          size_t target_index,
                                          const char *const *left,
                                          size_t n_left,
                                          const char *const *right,
                                          size_t n_right,
                                          enum CtxwsdContext context,
                                          float *out,
                                          size_t out_len);

/**
 * Loads a head checkpoint written by `ctxwsd train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_head` must be writable.
 */
enum CtxwsdStatus ctxwsd_head_load(const char *path, struct CtxwsdHead **out_head);

/**
 * # Safety
 * `head` must come from [`ctxwsd_head_load`] and not be freed twice.
 */
void ctxwsd_head_free(struct CtxwsdHead *head);

/**
 * Variant name (`1nn`, `simple`, `lw`, `glu`, `glu-lw`), or NULL. Valid
 * while the handle lives.
 *
 * # Safety
 * `head` must be NULL or a live handle.
 */
const char *ctxwsd_head_variant(const struct CtxwsdHead *head);

/**
 * Predicts the sense of a target word from its `n_layers × d_model`
 * features. Lexelts unknown to the head back off to their most frequent
 * training sense. The sense id is written NUL-terminated into `out_sense`;
 * `out_len` receives the byte length including the terminator, also when
 * the buffer is too small.
 *
 * # Safety
 * `features` must hold `n_layers * d_model` floats; `lemma` must be a
 * NUL-terminated string and `pos` NULL or one; `out_sense` must have room
 * for `capacity` bytes.
 */
enum CtxwsdStatus ctxwsd_head_predict(const struct CtxwsdHead *head,
                                      const float *features,
                                      size_t n_layers,
                                      size_t d_model,
                                      const char *lemma,
                                      const char *pos,
                                      char *out_sense,
                                      size_t capacity,
                                      size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTXWSD_H */
