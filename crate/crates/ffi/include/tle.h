#ifndef TLE_H
#define TLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TleStatus {
  TLE_STATUS_OK = 0,
  TLE_STATUS_NULL_POINTER = 1,
  TLE_STATUS_INVALID_ARGUMENT = 2,
  TLE_STATUS_DIMENSION_MISMATCH = 3,
  TLE_STATUS_IO = 4,
  TLE_STATUS_FORMAT = 5,
  TLE_STATUS_NON_FINITE = 6,
  TLE_STATUS_BUFFER_TOO_SMALL = 7,
  TLE_STATUS_PANIC = 8,
} TleStatus;

/**
 * Opaque dataset handle.
 */
typedef struct TleDataset TleDataset;

/**
 * Opaque model handle.
 */
typedef struct TleModel TleModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tle_version(void);

/**
 * Length in bytes of the calling thread's last error message, including
 * the terminating NUL; 0 if the last call succeeded.
 */
size_t tle_last_error_length(void);

/**
 * Copies the last error message into `buf` (truncated, always
 * NUL-terminated when `len > 0`). Returns the full length including NUL.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null with `len == 0`.
 */
size_t tle_last_error_message(char *buf, size_t len);

/**
 * Reads a TLEF dataset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TleStatus tle_dataset_read(const char *path, struct TleDataset **out);

/**
 * Writes a dataset in TLEF format.
 *
 * # Safety
 * `dataset` must be a live handle; `path` a NUL-terminated string.
 */
enum TleStatus tle_dataset_write(const struct TleDataset *dataset, const char *path);

/**
 * Generates a synthetic dataset. `test_split` selects the held-out noise
 * stream; `temporal` tags videos as the temporal stream.
 *
 * # Safety
 * `out` must be writable.
 */
enum TleStatus tle_dataset_synth(size_t classes,
                                 size_t videos_per_class,
                                 size_t frames,
                                 size_t height,
                                 size_t width,
                                 size_t channels,
                                 double difficulty,
                                 uint64_t seed,
                                 bool test_split,
                                 bool temporal,
                                 struct TleDataset **out);

/**
 * Number of videos; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be a live handle or null.
 */
size_t tle_dataset_len(const struct TleDataset *dataset);

/**
 * Number of classes; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be a live handle or null.
 */
size_t tle_dataset_classes(const struct TleDataset *dataset);

/**
 * Label of video `index`, or `SIZE_MAX` if out of range.
 *
 * # Safety
 * `dataset` must be a live handle or null.
 */
size_t tle_dataset_label(const struct TleDataset *dataset, size_t index);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void tle_dataset_free(struct TleDataset *dataset);

/**
 * Trains a model. `config` holds `key = value` lines (may be null or
 * empty for defaults).
 *
 * # Safety
 * `dataset` must be a live handle, `config` null or NUL-terminated, `out`
 * writable.
 */
enum TleStatus tle_model_train(const struct TleDataset *dataset,
                               const char *config,
                               struct TleModel **out);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` writable.
 */
enum TleStatus tle_model_load(const char *path, struct TleModel **out);

/**
 * Saves a model file.
 *
 * # Safety
 * `model` must be a live handle; `path` NUL-terminated.
 */
enum TleStatus tle_model_save(const struct TleModel *model, const char *path);

/**
 * Number of classes; 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t tle_model_classes(const struct TleModel *model);

/**
 * Predicts video `index` of `dataset`, averaging `groups` segment groups.
 * Writes the class to `class_out` and the averaged logits to `scores`
 * (`scores_len` ≥ class count; `scores` may be null when `scores_len`
 * is 0).
 *
 * # Safety
 * Handles must be live; `class_out` writable; `scores` valid for
 * `scores_len` values.
 */
enum TleStatus tle_model_predict(const struct TleModel *model,
                                 const struct TleDataset *dataset,
                                 size_t index,
                                 size_t groups,
                                 size_t *class_out,
                                 double *scores,
                                 size_t scores_len);

/**
 * Video-level accuracy of `model` on `dataset`.
 *
 * # Safety
 * Handles must be live; `accuracy` writable.
 */
enum TleStatus tle_model_evaluate(const struct TleModel *model,
                                  const struct TleDataset *dataset,
                                  size_t groups,
                                  double *accuracy);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void tle_model_free(struct TleModel *model);

/**
 * Full bilinear pooling of an `h × w × c` map (row-major, channels
 * fastest) into `out` (`c²` values).
 *
 * # Safety
 * `x` must hold `h·w·c` values and `out` `out_len` values.
 */
enum TleStatus tle_bilinear_forward(const double *x,
                                    size_t height,
                                    size_t width,
                                    size_t channels,
                                    double *out,
                                    size_t out_len);

/**
 * Tensor sketch of an `h × w × c` map into `d` values, with tables
 * derived from `seed`.
 *
 * # Safety
 * `x` must hold `h·w·c` values and `out` `out_len` values.
 */
enum TleStatus tle_tensor_sketch_forward(const double *x,
                                         size_t height,
                                         size_t width,
                                         size_t channels,
                                         size_t d,
                                         uint64_t seed,
                                         double *out,
                                         size_t out_len);

/**
 * Late fusion: element-wise mean of two score vectors of length `n`.
 *
 * # Safety
 * `spatial`, `temporal` and `out` must each hold `n` values.
 */
enum TleStatus tle_fuse_streams(const double *spatial,
                                const double *temporal,
                                size_t n,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TLE_H */
