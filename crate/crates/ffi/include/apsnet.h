#ifndef APSNET_H
#define APSNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ApsStatus {
  APS_STATUS_OK = 0,
  APS_STATUS_NULL_POINTER = 1,
  APS_STATUS_INVALID_ARGUMENT = 2,
  APS_STATUS_SHAPE_MISMATCH = 3,
  APS_STATUS_SPEC = 4,
  APS_STATUS_IO = 5,
  APS_STATUS_FORMAT = 6,
  APS_STATUS_CONFIG = 7,
  APS_STATUS_PANIC = 8,
  APS_STATUS_OTHER = 9,
} ApsStatus;

/**
 * Opaque 64-bit network.
 */
typedef struct ApsNetwork ApsNetwork;

/**
 * Opaque 64-bit rank-4 tensor.
 */
typedef struct ApsTensor ApsTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or an empty string.
 * Valid until the next `aps_*` call on the same thread.
 */
const char *aps_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *aps_version(void);

/**
 * New `(n, c, h, w)` tensor. Copies `n*c*h*w` values from `data`, or
 * zero-fills when `data` is null.
 *
 * # Safety
 * `data` is null or points to `n*c*h*w` readable doubles; `out` is writable.
 */
enum ApsStatus aps_tensor_new(size_t n,
                              size_t c,
                              size_t h,
                              size_t w,
                              const double *data,
                              struct ApsTensor **out);

/**
 * # Safety
 * `t` is null or a handle from this library that has not been freed.
 */
void aps_tensor_free(struct ApsTensor *t);

/**
 * Writes `n, c, h, w` into `dims[0..4]`.
 *
 * # Safety
 * `t` is a live handle; `dims` points to 4 writable `size_t`.
 */
enum ApsStatus aps_tensor_shape(const struct ApsTensor *t, size_t *dims);

/**
 * Borrowed pointer to the row-major values, valid while `t` lives.
 * Null if `t` is null.
 *
 * # Safety
 * `t` is null or a live handle.
 */
const double *aps_tensor_data(const struct ApsTensor *t);

/**
 * Number of elements, 0 if `t` is null.
 *
 * # Safety
 * `t` is null or a live handle.
 */
size_t aps_tensor_len(const struct ApsTensor *t);

/**
 * Reads a tensor file. 32-bit files are widened.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum ApsStatus aps_tensor_load(const char *path, struct ApsTensor **out);

/**
 * # Safety
 * `t` is a live handle; `path` is a NUL-terminated string.
 */
enum ApsStatus aps_tensor_save(const struct ApsTensor *t, const char *path);

/**
 * `out(r, c) = t(r - dy, c - dx)` with wrap-around.
 *
 * # Safety
 * `t` is a live handle; `out` is writable.
 */
enum ApsStatus aps_circular_shift(const struct ApsTensor *t,
                                  ptrdiff_t dy,
                                  ptrdiff_t dx,
                                  struct ApsTensor **out);

/**
 * Adaptive polyphase downsampling by `stride` with the max-l2 rule.
 * When `indices` is not null it receives `(i, j)` per batch item, so it
 * must hold `2 * n` entries.
 *
 * # Safety
 * `t` is a live handle; `out` is writable; `indices` is null or holds `2*n` `size_t`.
 */
enum ApsStatus aps_downsample_adaptive(const struct ApsTensor *t,
                                       size_t stride,
                                       struct ApsTensor **out,
                                       size_t *indices);

/**
 * Keeps the `(0, 0)` grid.
 *
 * # Safety
 * `t` is a live handle; `out` is writable.
 */
enum ApsStatus aps_downsample_fixed(const struct ApsTensor *t,
                                    size_t stride,
                                    struct ApsTensor **out);

/**
 * Builds a randomly initialised network from a TOML spec.
 *
 * # Safety
 * `spec_toml` is a NUL-terminated string; `out` is writable.
 */
enum ApsStatus aps_network_from_toml(const char *spec_toml, struct ApsNetwork **out);

/**
 * Loads a network saved by `apsnet train` (its `params` directory).
 *
 * # Safety
 * `dir` is a NUL-terminated string; `out` is writable.
 */
enum ApsStatus aps_network_load(const char *dir, struct ApsNetwork **out);

/**
 * # Safety
 * `net` is null or a live handle.
 */
void aps_network_free(struct ApsNetwork *net);

/**
 * Number of output classes, 0 if `net` is null.
 *
 * # Safety
 * `net` is null or a live handle.
 */
size_t aps_network_classes(const struct ApsNetwork *net);

/**
 * Logits `(N, K, 1, 1)` for a batch `x`.
 *
 * # Safety
 * `net` and `x` are live handles; `out` is writable.
 */
enum ApsStatus aps_network_forward(const struct ApsNetwork *net,
                                   const struct ApsTensor *x,
                                   struct ApsTensor **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APSNET_H */
