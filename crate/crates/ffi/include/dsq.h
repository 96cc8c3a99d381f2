#ifndef DSQ_H
#define DSQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsqStatus {
  DSQ_STATUS_OK = 0,
  DSQ_STATUS_NULL_POINTER = 1,
  DSQ_STATUS_INVALID_ARGUMENT = 2,
  DSQ_STATUS_UNSUPPORTED_BITS = 3,
  DSQ_STATUS_INVALID_RANGE = 4,
  DSQ_STATUS_ALPHA_OUT_OF_RANGE = 5,
  DSQ_STATUS_SHAPE_MISMATCH = 6,
  DSQ_STATUS_NON_FINITE = 7,
  DSQ_STATUS_FORMAT = 8,
  DSQ_STATUS_IO = 9,
  DSQ_STATUS_BUFFER_TOO_SMALL = 10,
  DSQ_STATUS_PANIC = 11,
  DSQ_STATUS_OTHER = 12,
} DsqStatus;

typedef enum DsqMode {
  /**
   * Soft quantizer.
   */
  DSQ_MODE_SOFT = 0,
  /**
   * Soft quantizer followed by the sign step.
   */
  DSQ_MODE_HARD = 1,
  /**
   * Round to nearest level.
   */
  DSQ_MODE_UNIFORM = 2,
} DsqMode;

/**
 * Network loaded from a model archive.
 */
typedef struct DsqModel DsqModel;

/**
 * Matrix of signed low-bit codes.
 */
typedef struct DsqPacked DsqPacked;

/**
 * Quantizer parameters (bit width, clipping range, alpha).
 */
typedef struct DsqQuantizer DsqQuantizer;

/**
 * Gradients of the soft quantizer output.
 */
typedef struct DsqGradients {
  double d_x;
  double d_alpha;
  double d_lower;
  double d_upper;
} DsqGradients;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *dsq_last_error(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DsqStatus dsq_quantizer_new(uint8_t bits,
                                 double lower,
                                 double upper,
                                 double alpha,
                                 struct DsqQuantizer **out);

/**
 * # Safety
 * `q` must be null or a handle from [`dsq_quantizer_new`] not yet freed.
 */
void dsq_quantizer_free(struct DsqQuantizer *q);

/**
 * # Safety
 * `q` must be a live quantizer handle and `k` writable.
 */
enum DsqStatus dsq_quantizer_sharpness(const struct DsqQuantizer *q, double *k);

/**
 * Quantizes `len` values from `input` into `output` (which may alias).
 *
 * # Safety
 * `q` must be a live handle; `input` and `output` must hold `len` values.
 */
enum DsqStatus dsq_quantize(const struct DsqQuantizer *q,
                            enum DsqMode mode,
                            const double *input,
                            double *output,
                            size_t len);

/**
 * # Safety
 * `q` must be a live handle and `out` writable.
 */
enum DsqStatus dsq_backward(const struct DsqQuantizer *q,
                            double x,
                            double upstream,
                            struct DsqGradients *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum DsqStatus dsq_mac_budget(uint8_t bits, size_t *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum DsqStatus dsq_widen_count(size_t k, uint8_t bits, size_t *out);

/**
 * Quantizes a row-major `rows x cols` matrix to signed codes.
 *
 * # Safety
 * `values` must hold `rows * cols` doubles, `q` must be live and `out`
 * writable.
 */
enum DsqStatus dsq_pack(const double *values,
                        size_t rows,
                        size_t cols,
                        const struct DsqQuantizer *q,
                        struct DsqPacked **out);

/**
 * # Safety
 * `p` must be null or a live handle from [`dsq_pack`].
 */
void dsq_packed_free(struct DsqPacked *p);

/**
 * # Safety
 * `p` must be live; `rows` and `cols` writable.
 */
enum DsqStatus dsq_packed_shape(const struct DsqPacked *p, size_t *rows, size_t *cols);

/**
 * Copies the codes (row-major) into `codes`.
 *
 * # Safety
 * `p` must be live; `codes` must have room for `len` bytes.
 */
enum DsqStatus dsq_packed_codes(const struct DsqPacked *p, int8_t *codes, size_t len);

/**
 * Integer product `a * b` into a row-major `i32` buffer of
 * `a.rows * b.cols` elements. `threads` of 0 uses all cores.
 *
 * # Safety
 * Handles must be live; `out` must have room for `len` elements.
 */
enum DsqStatus dsq_gemm(const struct DsqPacked *a,
                        const struct DsqPacked *b,
                        size_t threads,
                        int32_t *out,
                        size_t len);

/**
 * Real-valued product recovered from the integer result of [`dsq_gemm`].
 *
 * # Safety
 * Handles must be live; `c` and `out` must hold `a.rows * b.cols`
 * elements.
 */
enum DsqStatus dsq_gemm_dequantize(const struct DsqPacked *a,
                                   const struct DsqPacked *b,
                                   const int32_t *c,
                                   double *out,
                                   size_t len);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum DsqStatus dsq_model_load(const char *path, struct DsqModel **out);

/**
 * # Safety
 * `m` must be null or a live handle from [`dsq_model_load`].
 */
void dsq_model_free(struct DsqModel *m);

/**
 * Number of output classes of the model.
 *
 * # Safety
 * `m` must be live and `out` writable.
 */
enum DsqStatus dsq_model_outputs(const struct DsqModel *m, size_t *out);

/**
 * Forward pass with the hard quantizer on `rows` samples of `cols`
 * features; writes `rows * outputs` logits.
 *
 * # Safety
 * `m` must be live; `input` must hold `rows * cols` values and `output`
 * have room for `len`.
 */
enum DsqStatus dsq_model_forward(const struct DsqModel *m,
                                 const double *input,
                                 size_t rows,
                                 size_t cols,
                                 double *output,
                                 size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSQ_H */
