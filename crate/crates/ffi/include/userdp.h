#ifndef USERDP_H
#define USERDP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum UdpStatus {
  UDP_STATUS_OK = 0,
  UDP_STATUS_NULL_POINTER = 1,
  UDP_STATUS_INVALID_PARAMETER = 2,
  UDP_STATUS_DIMENSION_MISMATCH = 3,
  UDP_STATUS_BELOW_THRESHOLD = 4,
  UDP_STATUS_NON_FINITE = 5,
  UDP_STATUS_INTERNAL = 99,
} UdpStatus;

/**
 * Estimator applied to a point set.
 */
typedef enum UdpEngine {
  UDP_ENGINE_SINGLE = 0,
  UDP_ENGINE_AMPLIFIED = 1,
  UDP_ENGINE_BLOCKWISE = 2,
} UdpEngine;

/**
 * Which estimate came back.
 */
typedef enum UdpOutcome {
  UDP_OUTCOME_ACCEPTED = 0,
  UDP_OUTCOME_GARBAGE1 = 1,
  UDP_OUTCOME_GARBAGE2 = 2,
} UdpOutcome;

/**
 * `n` users with `m` samples of dimension `d`.
 */
typedef struct UdpDataset UdpDataset;

/**
 * Seeded random stream.
 */
typedef struct UdpRng UdpRng;

/**
 * Randomized Hadamard rotation of a fixed dimension.
 */
typedef struct UdpRotation UdpRotation;

/**
 * Library version as a static NUL-terminated string.
 */
const char *udp_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into the library on the same thread.
 */
const char *udp_last_error(void);

struct UdpRng *udp_rng_new(uint64_t seed);

/**
 * # Safety
 * `rng` must come from [`udp_rng_new`] and not be freed twice.
 */
void udp_rng_free(struct UdpRng *rng);

/**
 * Copies `n·m·d` samples into a new dataset; null on failure.
 *
 * # Safety
 * `data` must point to `n·m·d` readable doubles.
 */
struct UdpDataset *udp_dataset_new(size_t n, size_t m, size_t d, const double *data);

/**
 * # Safety
 * `ds` must come from [`udp_dataset_new`] and not be freed twice.
 */
void udp_dataset_free(struct UdpDataset *ds);

/**
 * Writes `n`, `m` and `d` through the non-null pointers.
 *
 * # Safety
 * `ds` must be a live dataset handle.
 */
enum UdpStatus udp_dataset_shape(const struct UdpDataset *ds, size_t *n, size_t *m, size_t *d);

/**
 * Item-level estimate of the center of `n` points in `d` dimensions.
 *
 * `out` receives `d` coordinates when `*out_outcome` is `Accepted`.
 *
 * # Safety
 * `points` must hold `n·d` doubles, `out` room for `d`, and both handles
 * must be live.
 */
enum UdpStatus udp_estimate_points(const double *points,
                                   size_t n,
                                   size_t d,
                                   double r,
                                   double alpha,
                                   double eps,
                                   double delta,
                                   enum UdpEngine engine,
                                   struct UdpRng *rng,
                                   double *out,
                                   enum UdpOutcome *out_outcome);

/**
 * User-level estimate of the mean; `out` receives `d` coordinates.
 *
 * # Safety
 * Handles must be live and `out` must have room for `d` doubles.
 */
enum UdpStatus udp_estimate_user(const struct UdpDataset *ds,
                                 double r,
                                 double alpha,
                                 double eps,
                                 double delta,
                                 struct UdpRng *rng,
                                 double *out,
                                 enum UdpOutcome *out_outcome);

/**
 * Rotation for dimension `d` with seeded signs; null on failure.
 */
struct UdpRotation *udp_rotation_new(size_t d, uint64_t seed);

/**
 * # Safety
 * `rot` must come from [`udp_rotation_new`] and not be freed twice.
 */
void udp_rotation_free(struct UdpRotation *rot);

/**
 * Padded dimension (next power of two), or 0 for a null handle.
 *
 * # Safety
 * `rot` must be null or a live rotation handle.
 */
size_t udp_rotation_padded_dim(const struct UdpRotation *rot);

/**
 * Maps `d` input coordinates to `d_pad` rotated ones.
 *
 * # Safety
 * `input` must hold `d` doubles and `out` room for `d_pad`.
 */
enum UdpStatus udp_rotation_apply(const struct UdpRotation *rot, const double *input, double *out);

/**
 * Inverse of [`udp_rotation_apply`]: `d_pad` inputs back to `d` outputs.
 *
 * # Safety
 * `input` must hold `d_pad` doubles and `out` room for `d`.
 */
enum UdpStatus udp_rotation_invert(const struct UdpRotation *rot, const double *input, double *out);

/**
 * Total `(ε, δ)` of `k` adaptive `(eps, delta)` calls with slack `delta_prime`.
 *
 * # Safety
 * `out_eps` and `out_delta` must be writable.
 */
enum UdpStatus udp_strong_compose(double eps,
                                  double delta,
                                  uint64_t k,
                                  double delta_prime,
                                  double *out_eps,
                                  double *out_delta);

#endif  /* USERDP_H */
