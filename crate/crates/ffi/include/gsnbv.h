#ifndef GSNBV_H
#define GSNBV_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define GSNBV_OK 0

#define GSNBV_ERR_NULL -1

#define GSNBV_ERR_INVALID -2

#define GSNBV_ERR_DIMENSION -3

#define GSNBV_ERR_IO -4

#define GSNBV_ERR_FORMAT -5

#define GSNBV_ERR_CONFIG -6

#define GSNBV_ERR_BUFFER -7

#define GSNBV_ERR_PANIC -8

/**
 * Opaque scene handle.
 */
typedef struct GsnbvScene GsnbvScene;

/**
 * Opaque viewpoint-set handle.
 */
typedef struct GsnbvViewpoints GsnbvViewpoints;

/**
 * Decomposed view score.
 */
typedef struct GsnbvViewScore {
  double l_blend;
  double l_blend_star;
  double sum_r;
  double sum_d;
  double total;
} GsnbvViewScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *gsnbv_last_error_message(void);

/**
 * Generates a synthetic scene. `layout` is "blob-cluster", "textured-box" or
 * "occluded-cavity"; bounds are unit half-extents.
 *
 * # Safety
 * `layout` must be a NUL-terminated string; `out` must be writable.
 */
int32_t gsnbv_scene_generate(uint64_t seed,
                             size_t n_gaussians,
                             const char *layout,
                             struct GsnbvScene **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
int32_t gsnbv_scene_load(const char *path, struct GsnbvScene **out);

/**
 * # Safety
 * `scene` must come from this library; `path` must be a NUL-terminated string.
 */
int32_t gsnbv_scene_save(const struct GsnbvScene *scene, const char *path);

/**
 * Number of Gaussians, or 0 for NULL.
 *
 * # Safety
 * `scene` must be NULL or come from this library.
 */
size_t gsnbv_scene_len(const struct GsnbvScene *scene);

/**
 * # Safety
 * `scene` must be NULL or an unfreed handle from this library.
 */
void gsnbv_scene_free(struct GsnbvScene *scene);

/**
 * Fibonacci-sphere candidate cameras looking at the origin.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t gsnbv_viewpoints_sample(size_t n,
                                double radius,
                                uint64_t seed,
                                double fov_deg,
                                size_t width,
                                size_t height,
                                struct GsnbvViewpoints **out);

/**
 * # Safety
 * `vp` must be NULL or come from this library.
 */
size_t gsnbv_viewpoints_len(const struct GsnbvViewpoints *vp);

/**
 * # Safety
 * `vp` must be NULL or an unfreed handle from this library.
 */
void gsnbv_viewpoints_free(struct GsnbvViewpoints *vp);

/**
 * Renders `scene` from camera `index` of `vp`. `rgb` receives width·height·3
 * values; `depth` and `alpha` (either may be NULL) width·height each.
 *
 * # Safety
 * Handles must come from this library; each non-NULL buffer must hold at
 * least its stated length.
 */
int32_t gsnbv_render(const struct GsnbvScene *scene,
                     const struct GsnbvViewpoints *vp,
                     size_t index,
                     double *rgb,
                     size_t rgb_len,
                     double *depth,
                     size_t depth_len,
                     double *alpha,
                     size_t alpha_len);

/**
 * Total view score from depth, render-uncertainty and depth-uncertainty maps
 * of width·height values each. Depth is divided by `depth_scale`.
 *
 * # Safety
 * Input arrays must hold width·height values; `out` must be writable.
 */
int32_t gsnbv_score(const double *depth,
                    const double *r,
                    const double *d,
                    size_t width,
                    size_t height,
                    double lambda0,
                    double lambda1,
                    double lambda2,
                    double depth_scale,
                    struct GsnbvViewScore *out);

/**
 * PSNR in dB of two RGB images; identical images give +infinity.
 *
 * # Safety
 * `a` and `b` must hold width·height·3 values; `out` must be writable.
 */
int32_t gsnbv_psnr(const double *a, const double *b, size_t width, size_t height, double *out);

/**
 * Mean SSIM of two RGB images.
 *
 * # Safety
 * `a` and `b` must hold width·height·3 values; `out` must be writable.
 */
int32_t gsnbv_ssim(const double *a, const double *b, size_t width, size_t height, double *out);

/**
 * Per-pixel (1 − SSIM)/2 between a rendering and its ground truth.
 *
 * # Safety
 * `rendered` and `gt` must hold width·height·3 values; `out` must hold
 * `out_len` ≥ width·height values.
 */
int32_t gsnbv_oracle_uncertainty(const double *rendered,
                                 const double *gt,
                                 size_t width,
                                 size_t height,
                                 double *out,
                                 size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSNBV_H */
