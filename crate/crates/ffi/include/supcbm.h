#ifndef SUPCBM_H
#define SUPCBM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SupcbmStatus {
  SUPCBM_STATUS_OK = 0,
  SUPCBM_STATUS_NULL_POINTER = 1,
  SUPCBM_STATUS_INVALID_ARGUMENT = 2,
  SUPCBM_STATUS_IO = 3,
  SUPCBM_STATUS_FORMAT = 4,
  SUPCBM_STATUS_SHAPE_MISMATCH = 5,
  SUPCBM_STATUS_CHECKSUM_MISMATCH = 6,
  SUPCBM_STATUS_PANIC = 7,
} SupcbmStatus;

// Values accepted in the `edit_values` array of [`supcbm_model_intervene`].
typedef enum SupcbmEdit {
  SUPCBM_EDIT_OFF = 0,
  SUPCBM_EDIT_ON = 1,
  SUPCBM_EDIT_CLEAR = 2,
} SupcbmEdit;

// Opaque handle to a loaded model.
typedef struct SupcbmModel SupcbmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a checkpoint manifest. `vocab_path` may be null for baseline
// checkpoints; bottleneck checkpoints need the vocabulary they were trained
// with. On success `*out` owns a handle to release with
// [`supcbm_model_free`].
//
// # Safety
// Paths must be null or NUL-terminated strings; `out` must be writable.
enum SupcbmStatus supcbm_model_load(const char *checkpoint_path,
                                    const char *vocab_path,
                                    struct SupcbmModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle from [`supcbm_model_load`] not yet freed.
void supcbm_model_free(struct SupcbmModel *model);

// Input dimension `d`, number of bottleneck units `m`, number of classes `l`.
// Any output pointer may be null.
//
// # Safety
// `model` must be a live handle; non-null outputs must be writable.
enum SupcbmStatus supcbm_model_dims(const struct SupcbmModel *model,
                                    size_t *d,
                                    size_t *m,
                                    size_t *l);

// Scores one embedding. `c_out` (length `m`) and `l_out` (length `l`) are
// optional; when given, their lengths must match exactly.
//
// # Safety
// `x` must point to `x_len` doubles; outputs must be null or writable for
// their stated lengths.
enum SupcbmStatus supcbm_model_predict(const struct SupcbmModel *model,
                                       const double *x,
                                       size_t x_len,
                                       double *c_out,
                                       size_t c_len,
                                       double *l_out,
                                       size_t l_len,
                                       size_t *predicted_out);

// Applies `n_edits` concept overrides (`edit_ids[k]` set to
// `edit_values[k]`, a [`SupcbmEdit`] value) and writes the edited record.
// A later edit of the same id replaces an earlier one.
//
// # Safety
// As [`supcbm_model_predict`]; `edit_ids` and `edit_values` must each point
// to `n_edits` elements.
enum SupcbmStatus supcbm_model_intervene(const struct SupcbmModel *model,
                                         const double *x,
                                         size_t x_len,
                                         const size_t *edit_ids,
                                         const uint32_t *edit_values,
                                         size_t n_edits,
                                         double *c_out,
                                         size_t c_len,
                                         double *l_out,
                                         size_t l_len,
                                         size_t *predicted_out);

// Cosine similarity of two vectors of length `len`, in `[-1, 1]`.
//
// # Safety
// `u` and `v` must point to `len` doubles; `out` must be writable.
enum SupcbmStatus supcbm_cosine(const double *u, const double *v, size_t len, double *out);

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *supcbm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *supcbm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUPCBM_H */
