#ifndef LLMLAB_H
#define LLMLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LlmlabStatus {
  LLMLAB_STATUS_OK = 0,
  LLMLAB_STATUS_NULL_POINTER = 1,
  LLMLAB_STATUS_INVALID_ARGUMENT = 2,
  LLMLAB_STATUS_DIMENSION_MISMATCH = 3,
  LLMLAB_STATUS_NOT_NORMALIZED = 4,
  LLMLAB_STATUS_IO = 5,
  LLMLAB_STATUS_PARSE = 6,
  LLMLAB_STATUS_BUFFER_TOO_SMALL = 7,
  LLMLAB_STATUS_PANIC = 8,
} LlmlabStatus;

typedef enum LlmlabStrategy {
  LLMLAB_STRATEGY_SEQUENTIAL = 0,
  LLMLAB_STRATEGY_PAIRWISE_TREE = 1,
  /**
   * `param` is the chunk size.
   */
  LLMLAB_STRATEGY_CHUNKED = 2,
  /**
   * `param` is the shuffle seed.
   */
  LLMLAB_STRATEGY_SHUFFLED = 3,
} LlmlabStrategy;

typedef enum LlmlabPrecision {
  LLMLAB_PRECISION_F32 = 0,
  LLMLAB_PRECISION_F64 = 1,
} LlmlabPrecision;

/**
 * Unitary circuit with its terminal readout basis.
 */
typedef struct LlmlabCircuit LlmlabCircuit;

/**
 * One-hidden-layer sigmoid network.
 */
typedef struct LlmlabMicroNet LlmlabMicroNet;

/**
 * Byte-pair vocabulary.
 */
typedef struct LlmlabVocab LlmlabVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *llmlab_last_error_message(void);

void llmlab_clear_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *llmlab_version(void);

/**
 * `out[i] = softmax(logits / temperature)[i]` for `n` logits.
 *
 * # Safety
 * `logits` and `out` must point to `n` valid doubles.
 */
enum LlmlabStatus llmlab_softmax_temperature(const double *logits,
                                             size_t n,
                                             double temperature,
                                             double *out);

/**
 * Sums `n` values under the given reduction plan.
 *
 * # Safety
 * `data` must point to `n` doubles; `out` to one.
 */
enum LlmlabStatus llmlab_reduce(const double *data,
                                size_t n,
                                enum LlmlabStrategy strategy,
                                uint64_t param,
                                enum LlmlabPrecision precision,
                                double *out_sum);

/**
 * Row-major `n x n` attention weights for row-major `n x d` queries and keys.
 *
 * # Safety
 * `q` and `k` must point to `n * d` doubles, `out` to `n * n`.
 */
enum LlmlabStatus llmlab_attention_weights(const double *q,
                                           const double *k,
                                           size_t n,
                                           size_t d,
                                           bool causal,
                                           double *out);

/**
 * Born probabilities of `psi` in an orthonormal basis given as `dim` row
 * vectors (row-major `dim x dim`). Imaginary parts may be NULL for real input.
 *
 * # Safety
 * Non-null pointers must reference `dim` (state, out) or `dim * dim`
 * (basis) doubles.
 */
enum LlmlabStatus llmlab_born_probabilities(const double *psi_re,
                                            const double *psi_im,
                                            const double *basis_re,
                                            const double *basis_im,
                                            size_t dim,
                                            double *out);

/**
 * Number of unit vectors greedily kept in `R^d` with pairwise `|dot| <= epsilon`.
 *
 * # Safety
 * `out_count` must be a valid pointer.
 */
enum LlmlabStatus llmlab_greedy_pack(uint64_t seed,
                                     size_t d,
                                     double epsilon,
                                     size_t max_attempts,
                                     size_t *out_count);

/**
 * Learns a vocabulary of `target_size` tokens from `len` corpus bytes.
 *
 * # Safety
 * `corpus` must point to `len` bytes; `out` to a handle slot.
 */
enum LlmlabStatus llmlab_vocab_train(const uint8_t *corpus,
                                     size_t len,
                                     size_t target_size,
                                     struct LlmlabVocab **out);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` a handle slot.
 */
enum LlmlabStatus llmlab_vocab_load(const char *path, struct LlmlabVocab **out);

/**
 * # Safety
 * `vocab` must come from this library; `path` must be NUL-terminated UTF-8.
 */
enum LlmlabStatus llmlab_vocab_save(const struct LlmlabVocab *vocab, const char *path);

/**
 * # Safety
 * `vocab` must come from this library; `out_size` must be valid.
 */
enum LlmlabStatus llmlab_vocab_size(const struct LlmlabVocab *vocab, size_t *out_size);

/**
 * Encodes `len` bytes into at most `cap` ids; `out_len` receives the
 * required count even when the buffer is too small.
 *
 * # Safety
 * `bytes` must point to `len` bytes, `ids` to `cap` ids.
 */
enum LlmlabStatus llmlab_bpe_encode(const struct LlmlabVocab *vocab,
                                    const uint8_t *bytes,
                                    size_t len,
                                    uint32_t *ids,
                                    size_t cap,
                                    size_t *out_len);

/**
 * Decodes `n` ids into raw bytes (not NUL-terminated).
 *
 * # Safety
 * `ids` must point to `n` ids, `bytes` to `cap` bytes.
 */
enum LlmlabStatus llmlab_bpe_decode(const struct LlmlabVocab *vocab,
                                    const uint32_t *ids,
                                    size_t n,
                                    uint8_t *bytes,
                                    size_t cap,
                                    size_t *out_len);

/**
 * # Safety
 * `vocab` must come from this library and not be used afterwards.
 */
void llmlab_vocab_free(struct LlmlabVocab *vocab);

/**
 * Randomly initialized network.
 *
 * # Safety
 * `out` must be a valid handle slot.
 */
enum LlmlabStatus llmlab_micronet_new(size_t vocab,
                                      size_t dim,
                                      size_t hidden,
                                      uint64_t seed,
                                      struct LlmlabMicroNet **out);

/**
 * Prediction `ŷ` for one token.
 *
 * # Safety
 * `net` must come from this library; `out_yhat` must be valid.
 */
enum LlmlabStatus llmlab_micronet_forward(const struct LlmlabMicroNet *net,
                                          size_t token,
                                          double *out_yhat);

/**
 * Largest relative deviation between analytic and central-difference
 * gradients at one example. `target` must be 0 or 1.
 *
 * # Safety
 * `net` must come from this library; `out_error` must be valid.
 */
enum LlmlabStatus llmlab_micronet_gradcheck(const struct LlmlabMicroNet *net,
                                            size_t token,
                                            uint8_t target,
                                            double epsilon,
                                            double *out_error);

/**
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void llmlab_micronet_free(struct LlmlabMicroNet *net);

/**
 * Parses a circuit description (the JSON written by `llmlab uattention`).
 *
 * # Safety
 * `json` must be NUL-terminated UTF-8; `out` a valid handle slot.
 */
enum LlmlabStatus llmlab_circuit_from_json(const char *json, struct LlmlabCircuit **out);

/**
 * # Safety
 * `circuit` must come from this library; `out_dim` must be valid.
 */
enum LlmlabStatus llmlab_circuit_dim(const struct LlmlabCircuit *circuit, size_t *out_dim);

/**
 * Outcome probabilities for standard basis input `input`.
 *
 * # Safety
 * `out` must hold the circuit dimension's worth of doubles.
 */
enum LlmlabStatus llmlab_circuit_probabilities(const struct LlmlabCircuit *circuit,
                                               size_t input,
                                               double *out);

/**
 * Histogram of `shots` seeded terminal measurements.
 *
 * # Safety
 * `counts` must hold the circuit dimension's worth of `uint64_t`.
 */
enum LlmlabStatus llmlab_circuit_sample(const struct LlmlabCircuit *circuit,
                                        size_t input,
                                        uint64_t seed,
                                        uint64_t shots,
                                        uint64_t *counts);

/**
 * # Safety
 * `circuit` must come from this library and not be used afterwards.
 */
void llmlab_circuit_free(struct LlmlabCircuit *circuit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LLMLAB_H */
