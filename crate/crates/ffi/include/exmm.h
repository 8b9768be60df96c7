#ifndef EXMM_H
#define EXMM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define EXMM_VARIANT_BASIC 0

#define EXMM_VARIANT_DEAMORTIZED 1

/**
 * Result codes. Zero is success.
 */
typedef enum ExmmStatus {
  EXMM_STATUS_OK = 0,
  EXMM_STATUS_NULL_ARGUMENT = 1,
  EXMM_STATUS_INVALID_CONFIG = 2,
  EXMM_STATUS_DUPLICATE = 3,
  EXMM_STATUS_NOT_FOUND = 4,
  EXMM_STATUS_TABLE_FULL = 5,
  EXMM_STATUS_STORE_ERROR = 6,
  EXMM_STATUS_AUDIT_FAILED = 7,
  EXMM_STATUS_BUFFER_TOO_SMALL = 8,
  EXMM_STATUS_PANIC = 9,
} ExmmStatus;

/**
 * Opaque multimap handle.
 */
typedef struct ExmmMultimap ExmmMultimap;

/**
 * Construction parameters. Fill with [`exmm_config_default`] and adjust.
 */
typedef struct ExmmConfig {
  /**
   * `EXMM_VARIANT_BASIC` or `EXMM_VARIANT_DEAMORTIZED`.
   */
  uint32_t variant;
  double beta;
  double gamma;
  size_t block_bytes;
  size_t cache_bytes;
  double epsilon;
  size_t key_capacity;
  size_t pair_capacity;
  uint64_t seed;
} ExmmConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Writes the default configuration to `out`.
 *
 * # Safety
 * `out` must be null or point to writable memory for an `ExmmConfig`.
 */
enum ExmmStatus exmm_config_default(struct ExmmConfig *out);

/**
 * Creates a multimap. On success `*out` receives a handle that must be
 * released with [`exmm_multimap_free`].
 *
 * # Safety
 * `cfg` must point to a valid `ExmmConfig`; `out` must be writable.
 */
enum ExmmStatus exmm_multimap_new(const struct ExmmConfig *cfg, struct ExmmMultimap **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `m` must be null or a live handle; it must not be used afterwards.
 */
void exmm_multimap_free(struct ExmmMultimap *m);

/**
 * Inserts `(key, value)`. Returns `Duplicate` if the pair is present.
 *
 * # Safety
 * `m` must be a live handle.
 */
enum ExmmStatus exmm_multimap_insert(struct ExmmMultimap *m, uint32_t key, uint64_t value);

/**
 * Removes `(key, value)`. Returns `NotFound` if the pair is absent.
 *
 * # Safety
 * `m` must be a live handle.
 */
enum ExmmStatus exmm_multimap_remove(struct ExmmMultimap *m, uint32_t key, uint64_t value);

/**
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum ExmmStatus exmm_multimap_is_member(struct ExmmMultimap *m,
                                        uint32_t key,
                                        uint64_t value,
                                        bool *out);

/**
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum ExmmStatus exmm_multimap_count(struct ExmmMultimap *m, uint32_t key, uint64_t *out);

/**
 * Copies the values of `key` into `values[0..cap]` and stores the number
 * of values in `*len`. If `cap` is too small nothing is copied, `*len`
 * holds the required size and `BufferTooSmall` is returned. `values` may
 * be null when `cap` is zero.
 *
 * # Safety
 * `m` must be a live handle; `values` must have room for `cap` elements;
 * `len` must be writable.
 */
enum ExmmStatus exmm_multimap_find_all(struct ExmmMultimap *m,
                                       uint32_t key,
                                       uint64_t *values,
                                       size_t cap,
                                       size_t *len);

/**
 * Removes every value of `key`.
 *
 * # Safety
 * `m` must be a live handle.
 */
enum ExmmStatus exmm_multimap_remove_all(struct ExmmMultimap *m, uint32_t key);

/**
 * Checks every structural invariant. Does not count as an operation.
 *
 * # Safety
 * `m` must be a live handle.
 */
enum ExmmStatus exmm_multimap_audit(const struct ExmmMultimap *m);

/**
 * Number of stored pairs.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum ExmmStatus exmm_multimap_len(const struct ExmmMultimap *m, uint64_t *out);

/**
 * Blocks read from disk since creation.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum ExmmStatus exmm_multimap_total_reads(const struct ExmmMultimap *m, uint64_t *out);

/**
 * Blocks read from disk by the most recent operation.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum ExmmStatus exmm_multimap_last_op_reads(const struct ExmmMultimap *m, uint64_t *out);

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *exmm_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXMM_H */
