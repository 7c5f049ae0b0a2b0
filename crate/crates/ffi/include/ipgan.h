#ifndef IPGAN_H
#define IPGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  IPGAN_STATUS_OK = 0,
  IPGAN_STATUS_NULL_POINTER = 1,
  IPGAN_STATUS_INVALID_ARGUMENT = 2,
  IPGAN_STATUS_IO = 3,
  IPGAN_STATUS_FORMAT = 4,
  IPGAN_STATUS_SHAPE = 5,
  IPGAN_STATUS_OUT_OF_RANGE = 6,
  IPGAN_STATUS_RUNTIME = 7,
  IPGAN_STATUS_PANIC = 8,
} IpganStatus;

/**
 * Retrieval scores from [`ipgan_evaluate`].
 */
typedef struct IpganEvalResult IpganEvalResult;

/**
 * Parsed manifest.
 */
typedef struct IpganManifest IpganManifest;

/**
 * Parameters of any of the networks.
 */
typedef struct IpganModel IpganModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *ipgan_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ipgan_version(void);

/**
 * Splits a Market-style file name into identity (-1 for junk) and camera.
 *
 * # Safety
 * `name` must be a NUL-terminated string; the outputs must be writable.
 */
IpganStatus ipgan_parse_reid_filename(const char *name, int64_t *identity, uint32_t *camera);

/**
 * Learning rate at `epoch` for a run of `total_epochs` (even) epochs.
 *
 * # Safety
 * `rate` must be writable.
 */
IpganStatus ipgan_lr_at_epoch(size_t total_epochs, double base_lr, size_t epoch, double *rate);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
IpganStatus ipgan_manifest_load(const char *path, IpganManifest **out);

/**
 * # Safety
 * `manifest` must come from [`ipgan_manifest_load`]; null is ignored.
 */
void ipgan_manifest_free(IpganManifest *manifest);

/**
 * Record count, camera count `L` and identity count `N`.
 *
 * # Safety
 * `manifest` must be a live handle; each output may be null to skip it.
 */
IpganStatus ipgan_manifest_info(const IpganManifest *manifest,
                                size_t *records,
                                size_t *cameras,
                                size_t *identities);

/**
 * Labels of record `index`.
 *
 * # Safety
 * `manifest` must be a live handle and the outputs writable.
 */
IpganStatus ipgan_manifest_record(const IpganManifest *manifest,
                                  size_t index,
                                  int64_t *identity,
                                  uint32_t *camera);

/**
 * Loads any saved parameter set (generator, discriminator or classifier).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
IpganStatus ipgan_model_load(const char *path, IpganModel **out);

/**
 * # Safety
 * `model` must come from [`ipgan_model_load`]; null is ignored.
 */
void ipgan_model_free(IpganModel *model);

/**
 * Total number of trainable scalars.
 *
 * # Safety
 * `model` must be a live handle and `count` writable.
 */
IpganStatus ipgan_model_num_parameters(const IpganModel *model, size_t *count);

/**
 * Translates one `height x width x channels` image (row-major, values in
 * [-1, 1]) into `domain` (0 = source, k = target camera k).
 *
 * # Safety
 * `pixels` and `output` must each hold `height * width * channels` floats.
 */
IpganStatus ipgan_generator_translate(const IpganModel *model,
                                      const float *pixels,
                                      size_t height,
                                      size_t width,
                                      size_t channels,
                                      size_t domain,
                                      float *output);

/**
 * Single-query CMC (depth `k`) and mAP over row-major feature matrices.
 *
 * # Safety
 * Feature arrays hold `rows * dim` doubles; label arrays hold `rows`
 * entries; `out` must be writable.
 */
IpganStatus ipgan_evaluate(const double *query,
                           const int64_t *query_ids,
                           const uint32_t *query_cams,
                           size_t num_queries,
                           const double *gallery,
                           const int64_t *gallery_ids,
                           const uint32_t *gallery_cams,
                           size_t num_gallery,
                           size_t dim,
                           size_t k,
                           IpganEvalResult **out);

/**
 * # Safety
 * `result` must come from [`ipgan_evaluate`]; null is ignored.
 */
void ipgan_eval_result_free(IpganEvalResult *result);

/**
 * mAP and the number of skipped queries.
 *
 * # Safety
 * `result` must be a live handle; outputs may be null to skip them.
 */
IpganStatus ipgan_eval_result_summary(const IpganEvalResult *result, double *map, size_t *skipped);

/**
 * Rank-`rank` accuracy (1-based).
 *
 * # Safety
 * `result` must be a live handle and `accuracy` writable.
 */
IpganStatus ipgan_eval_result_cmc(const IpganEvalResult *result, size_t rank, double *accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IPGAN_H */
