#ifndef TCSPLAT_H
#define TCSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TCS_BACKEND_REFERENCE 0

#define TCS_BACKEND_FRAG2MAT 1

#define TCS_BACKEND_FRAG2MAT_FP16 2

#define TCS_BACKEND_FRAG2MAT_TF32 3

#define TCS_COORDS_GLOBAL 0

#define TCS_COORDS_LOCAL 1

#define TCS_FORMAT_FP16 0

#define TCS_FORMAT_TF32 1

#define TCS_FORMAT_FP32 2

typedef enum {
  TCS_STATUS_OK = 0,
  TCS_STATUS_NULL_POINTER = 1,
  TCS_STATUS_INVALID_ARGUMENT = 2,
  TCS_STATUS_IO = 3,
  TCS_STATUS_FORMAT = 4,
  TCS_STATUS_VALIDATION = 5,
  TCS_STATUS_EMPTY_SCENE = 6,
  TCS_STATUS_BUFFER_TOO_SMALL = 7,
  TCS_STATUS_PANIC = 8,
} TcsStatus;

/**
 * Opaque camera handle.
 */
typedef struct TcsCamera TcsCamera;

/**
 * Opaque handle to a rendered image and its fragment statistics.
 */
typedef struct TcsRender TcsRender;

/**
 * Opaque scene handle.
 */
typedef struct TcsScene TcsScene;

typedef struct {
  uint64_t f_blend;
  uint64_t f_cull;
  uint64_t f_skip;
  uint64_t exp_calls;
  uint64_t n_splats;
  uint64_t overflow;
  double preprocess_ms;
  double sorting_ms;
  double blending_ms;
} TcsStats;

typedef struct {
  double abs_sum;
  double leading_order;
  double rigorous;
} TcsErrorBound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tcs_version(void);

/**
 * Message for the last failed call on this thread, or an empty string.
 * Valid until the next `tcs_*` call on the same thread.
 */
const char *tcs_last_error_message(void);

/**
 * Load a scene from a `.ply` checkpoint or a JSON scene file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
TcsStatus tcs_scene_load(const char *path, TcsScene **out);

/**
 * Number of Gaussians in a scene; 0 for a null handle.
 *
 * # Safety
 * `scene` must be null or a live handle.
 */
size_t tcs_scene_len(const TcsScene *scene);

/**
 * # Safety
 * `scene` must be null or a handle not yet freed.
 */
void tcs_scene_free(TcsScene *scene);

/**
 * Load a camera from JSON.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
TcsStatus tcs_camera_load(const char *path, TcsCamera **out);

/**
 * Create a pinhole camera. `view` points to 16 row-major doubles or is null
 * for the identity transform.
 *
 * # Safety
 * `view` must be null or point to 16 doubles; `out` must be valid.
 */
TcsStatus tcs_camera_new(uint32_t width,
                         uint32_t height,
                         double fx,
                         double fy,
                         double cx,
                         double cy,
                         double near,
                         const double *view,
                         TcsCamera **out);

/**
 * # Safety
 * `camera` must be null or a handle not yet freed.
 */
void tcs_camera_free(TcsCamera *camera);

/**
 * Render `scene` through `camera`.
 *
 * `backend` is one of `TCS_BACKEND_*` and `coords` one of `TCS_COORDS_*`;
 * the reference backend ignores `coords`. A `batch_width` of 0
 * selects the default.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
TcsStatus tcs_render(const TcsScene *scene,
                     const TcsCamera *camera,
                     uint32_t backend,
                     uint32_t coords,
                     uint32_t batch_width,
                     bool early_cull,
                     TcsRender **out);

/**
 * # Safety
 * `render` must be a live handle; the out pointers must be valid.
 */
TcsStatus tcs_render_dimensions(const TcsRender *render, uint32_t *width, uint32_t *height);

/**
 * # Safety
 * `render` must be a live handle; `out` must be valid.
 */
TcsStatus tcs_render_stats(const TcsRender *render, TcsStats *out);

/**
 * Copy the row-major RGB image as `width * height * 3` doubles into `out`,
 * which holds `len` doubles.
 *
 * # Safety
 * `render` must be a live handle; `out` must point to `len` doubles.
 */
TcsStatus tcs_render_copy_rgb(const TcsRender *render, double *out, size_t len);

/**
 * Write the image as binary PPM, or PNG for a `.png` path.
 *
 * # Safety
 * `render` must be a live handle; `path` a NUL-terminated string.
 */
TcsStatus tcs_render_write_image(const TcsRender *render, const char *path);

/**
 * # Safety
 * `render` must be null or a handle not yet freed.
 */
void tcs_render_free(TcsRender *render);

/**
 * PSNR in dB between two renders; `+inf` for identical images.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
TcsStatus tcs_psnr(const TcsRender *a, const TcsRender *b, double *out);

/**
 * Round `x` to the nearest value of a `TCS_FORMAT_*` format.
 *
 * # Safety
 * `out` must be valid.
 */
TcsStatus tcs_round_to(double x, uint32_t format, double *out);

/**
 * Emulated length-8 dot product with inputs in `format`, FP32 products and
 * left-to-right FP32 accumulation.
 *
 * # Safety
 * `u` and `v` must point to 8 doubles; out pointers must be valid.
 */
TcsStatus tcs_emulated_mma(const double *u,
                           const double *v,
                           uint32_t format,
                           double *beta,
                           bool *overflow);

/**
 * Error bounds of [`tcs_emulated_mma`] for the same inputs.
 *
 * # Safety
 * `u` and `v` must point to 8 doubles; `out` must be valid.
 */
TcsStatus tcs_error_bound(const double *u, const double *v, uint32_t format, TcsErrorBound *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TCSPLAT_H */
