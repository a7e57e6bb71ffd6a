#ifndef VANLKA_H
#define VANLKA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  VANLKA_STATUS_OK = 0,
  VANLKA_STATUS_NULL_ARGUMENT = 1,
  VANLKA_STATUS_INVALID_UTF8 = 2,
  VANLKA_STATUS_SHAPE = 3,
  VANLKA_STATUS_GEOMETRY = 4,
  VANLKA_STATUS_PARAMETER = 5,
  VANLKA_STATUS_CONFIG = 6,
  VANLKA_STATUS_FORMAT = 7,
  VANLKA_STATUS_VERSION = 8,
  VANLKA_STATUS_INTEGRITY = 9,
  VANLKA_STATUS_CORRUPTION = 10,
  VANLKA_STATUS_IO = 11,
  VANLKA_STATUS_BUFFER_TOO_SMALL = 12,
  VANLKA_STATUS_PANIC = 13,
} VanlkaStatus;

/**
 * A VAN model with 32-bit weights.
 */
typedef struct VanlkaModel VanlkaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a randomly initialised model.
 *
 * # Safety
 * `variant` must be a NUL-terminated string and `out` a writable pointer.
 * On success `*out` owns a model to be released with [`vanlka_model_free`].
 */
VanlkaStatus vanlka_model_new(const char *variant, uint64_t seed, VanlkaModel **out);

/**
 * Loads a checkpoint, validating every tensor against the variant.
 *
 * # Safety
 * `variant` and `path` must be NUL-terminated strings and `out` a writable
 * pointer. On success `*out` owns a model to be released with
 * [`vanlka_model_free`].
 */
VanlkaStatus vanlka_model_load(const char *variant, const char *path, VanlkaModel **out);

/**
 * Writes the model to a checkpoint file.
 *
 * # Safety
 * `model` must come from this library and `path` be a NUL-terminated string.
 */
VanlkaStatus vanlka_model_save(const VanlkaModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from this library that has not been
 * freed yet.
 */
void vanlka_model_free(VanlkaModel *model);

/**
 * Number of output classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t vanlka_model_num_classes(const VanlkaModel *model);

/**
 * Number of trainable scalars, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint64_t vanlka_model_parameter_count(const VanlkaModel *model);

/**
 * Classifies a batch of normalised NCHW images with 3 channels.
 *
 * `images` holds `batch * 3 * height * width` floats; `logits` receives
 * `batch * num_classes` floats, row-major. Height and width must be
 * multiples of 32.
 *
 * # Safety
 * `images` must be readable and `logits` writable for the given lengths.
 */
VanlkaStatus vanlka_model_forward(const VanlkaModel *model,
                                  const float *images,
                                  size_t batch,
                                  size_t height,
                                  size_t width,
                                  float *logits,
                                  size_t logits_len);

/**
 * Whole-model parameter and MAC counts at an `height x width` input.
 *
 * # Safety
 * `variant` must be a NUL-terminated string; `params` and `macs` writable.
 */
VanlkaStatus vanlka_model_cost(const char *variant,
                               size_t height,
                               size_t width,
                               bool bias,
                               uint64_t *params,
                               uint64_t *macs);

/**
 * Parameters of a dense KxK conv with C input and output channels.
 */
uint64_t vanlka_standard_conv_params(uint64_t kernel, uint64_t channels);

/**
 * Parameters of a KxK depthwise conv followed by a pointwise conv.
 */
uint64_t vanlka_mobilenet_decomp_params(uint64_t kernel, uint64_t channels);

/**
 * Parameters of the dw, dilated dw and pointwise decomposition of a KxK conv.
 * Returns 0 for a zero dilation.
 */
uint64_t vanlka_lka_decomp_params(uint64_t kernel, uint64_t dilation, uint64_t channels);

/**
 * MACs of the decomposition over an `height x width` map. Returns 0 for a
 * zero dilation.
 */
uint64_t vanlka_lka_decomp_macs(uint64_t kernel,
                                uint64_t dilation,
                                uint64_t channels,
                                uint64_t height,
                                uint64_t width);

/**
 * Cheapest dilation in `1..=min(d_max, kernel)`, or 0 when either is 0.
 */
uint64_t vanlka_optimal_dilation(uint64_t kernel, uint64_t d_max);

/**
 * Copies the last error message of this thread into `buf`, NUL-terminated
 * and truncated to `len`. Returns the full message length excluding the
 * NUL, or 0 when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or writable for `len` bytes.
 */
size_t vanlka_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vanlka_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VANLKA_H */
