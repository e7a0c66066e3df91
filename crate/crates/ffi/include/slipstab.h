#ifndef SLIPSTAB_H
#define SLIPSTAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SLIPSTAB_STATUS_OK = 0,
  SLIPSTAB_STATUS_NULL_POINTER = 1,
  SLIPSTAB_STATUS_INVALID_ARGUMENT = 2,
  SLIPSTAB_STATUS_EMPTY_INPUT = 3,
  SLIPSTAB_STATUS_DEGENERATE = 4,
  SLIPSTAB_STATUS_NO_CONVERGENCE = 5,
  SLIPSTAB_STATUS_CONFIG = 6,
  SLIPSTAB_STATUS_IO = 7,
  SLIPSTAB_STATUS_INTERNAL = 8,
} SlipstabStatus;

/**
 * Primitive template families.
 */
typedef enum {
  /**
   * params: size x, y, z
   */
  SLIPSTAB_PRIMITIVE_BOX = 0,
  /**
   * params: radius, height
   */
  SLIPSTAB_PRIMITIVE_CYLINDER = 1,
  /**
   * params: base x, y, z, top x, y, z, offset x, y
   */
  SLIPSTAB_PRIMITIVE_BOX_CLUSTER = 2,
  /**
   * params: bottom radius, top radius, height
   */
  SLIPSTAB_PRIMITIVE_REVOLUTION = 3,
} SlipstabPrimitive;

/**
 * Opaque oriented point cloud.
 */
typedef struct SlipstabCloud SlipstabCloud;

/**
 * Opaque pipeline configuration.
 */
typedef struct SlipstabConfig SlipstabConfig;

/**
 * Opaque template model.
 */
typedef struct SlipstabTemplate SlipstabTemplate;

typedef struct {
  /**
   * Ascending.
   */
  double eigenvalues[6];
  double measure;
  bool stable;
  uint32_t slippable;
} SlipstabStability;

/**
 * Rigid pose: unit quaternion `q = (w, x, y, z)` and translation `t`.
 */
typedef struct {
  double q[4];
  double t[3];
} SlipstabPose;

typedef struct {
  SlipstabPose pose;
  double residual;
  /**
   * True when no stable-group hypothesis verified.
   */
  bool fallback;
} SlipstabEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *slipstab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *slipstab_version(void);

/**
 * Builds a cloud from `n` positions and `n` normals, each packed as
 * `x, y, z` triples.
 *
 * # Safety
 * `positions` and `normals` must point to `3 * n` readable doubles and
 * `out` to writable storage for one handle.
 */
SlipstabStatus slipstab_cloud_new(const double *positions,
                                  const double *normals,
                                  size_t n,
                                  SlipstabCloud **out);

/**
 * Number of points, 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t slipstab_cloud_len(const SlipstabCloud *cloud);

/**
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void slipstab_cloud_free(SlipstabCloud *cloud);

/**
 * Unprojects the pixels of a row-major depth image. `mask` may be null to
 * use every pixel with positive depth; otherwise nonzero entries select
 * pixels. Normals come from `k` nearest neighbours.
 *
 * # Safety
 * `depth` (and `mask` when non-null) must hold `width * height` entries;
 * `out` must be writable.
 */
SlipstabStatus slipstab_cloud_from_depth(const float *depth,
                                         uint32_t width,
                                         uint32_t height,
                                         double fx,
                                         double fy,
                                         double cx,
                                         double cy,
                                         const uint8_t *mask,
                                         uint32_t k,
                                         SlipstabCloud **out);

/**
 * Slippage analysis of a cloud.
 *
 * # Safety
 * `cloud` must be a live handle and `out` writable.
 */
SlipstabStatus slipstab_analyze(const SlipstabCloud *cloud, bool normalize, SlipstabStability *out);

/**
 * Builds a primitive template; see [`SlipstabPrimitive`] for the
 * parameter layout.
 *
 * # Safety
 * `params` must hold `n_params` doubles and `out` must be writable.
 */
SlipstabStatus slipstab_template_new(SlipstabPrimitive kind,
                                     const double *params,
                                     size_t n_params,
                                     SlipstabTemplate **out);

/**
 * Template diameter, NaN for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double slipstab_template_diameter(const SlipstabTemplate *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void slipstab_template_free(SlipstabTemplate *model);

/**
 * Parses a JSON configuration; null `json` yields the defaults.
 *
 * # Safety
 * `json` must be null or a NUL-terminated string; `out` must be writable.
 */
SlipstabStatus slipstab_config_new(const char *json, SlipstabConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void slipstab_config_free(SlipstabConfig *cfg);

/**
 * Estimates the pose of `model` in the camera-frame `cloud`. A null
 * `cfg` uses the default configuration.
 *
 * # Safety
 * `cloud` and `model` must be live handles, `cfg` null or live, `out`
 * writable.
 */
SlipstabStatus slipstab_estimate_pose(const SlipstabCloud *cloud,
                                      const SlipstabTemplate *model,
                                      const SlipstabConfig *cfg,
                                      SlipstabEstimate *out);

/**
 * Mean closest-point distance between the model posed by `est` and `gt`.
 *
 * # Safety
 * Pointers must be valid; `out` writable.
 */
SlipstabStatus slipstab_adi(const SlipstabPose *est,
                            const SlipstabPose *gt,
                            const SlipstabTemplate *model,
                            double *out);

/**
 * Mean corresponding-point distance between the model posed by `est`
 * and `gt`.
 *
 * # Safety
 * Pointers must be valid; `out` writable.
 */
SlipstabStatus slipstab_add(const SlipstabPose *est,
                            const SlipstabPose *gt,
                            const SlipstabTemplate *model,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLIPSTAB_H */
