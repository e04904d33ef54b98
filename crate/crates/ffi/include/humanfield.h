#ifndef HUMANFIELD_H
#define HUMANFIELD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HfStatus {
  HF_STATUS_OK = 0,
  HF_STATUS_INVALID_ARGUMENT = 1,
  HF_STATUS_DATA_ERROR = 2,
  HF_STATUS_NUMERIC_ERROR = 3,
  HF_STATUS_NULL_POINTER = 4,
  HF_STATUS_PANIC = 5,
} HfStatus;

/**
 * Posable body model.
 */
typedef struct HfBody HfBody;

/**
 * Field generator with its template geometry cached per body.
 */
typedef struct HfGenerator HfGenerator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes without the terminator. `buf` may be null to query
 * the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t hf_last_error_message(char *buf, size_t len);

/**
 * Builds the procedural toy body with `parts` in 2..=16.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum HfStatus hf_body_make_toy(size_t parts,
                               size_t verts_per_part,
                               uint64_t seed,
                               struct HfBody **out);

/**
 * Reads a body model JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for a pointer write.
 */
enum HfStatus hf_body_load(const char *path, struct HfBody **out);

/**
 * Writes the body as canonical JSON.
 *
 * # Safety
 * `body` must come from this library and `path` be a NUL-terminated string.
 */
enum HfStatus hf_body_save(const struct HfBody *body, const char *path);

/**
 * Vertex, joint, part and shape-coefficient counts; any output may be null.
 *
 * # Safety
 * `body` must come from this library; non-null outputs must be writable.
 */
enum HfStatus hf_body_counts(const struct HfBody *body,
                             size_t *vertices,
                             size_t *joints,
                             size_t *parts,
                             size_t *shape_dim);

/**
 * Poses the body. `theta` holds `joints * 3` axis-angle values (null for
 * the rest pose), `beta` holds `beta_len` shape coefficients (null with
 * length 0 for the mean shape). Writes `vertices * 3` coordinates.
 *
 * # Safety
 * Pointers must be valid for the documented lengths.
 */
enum HfStatus hf_body_pose_vertices(const struct HfBody *body,
                                    const double *theta,
                                    const double *beta,
                                    size_t beta_len,
                                    double *out_xyz);

/**
 * Releases a body. Null is ignored.
 *
 * # Safety
 * `body` must be null or come from this library and not be used afterwards.
 */
void hf_body_free(struct HfBody *body);

/**
 * Fresh generator for a body with `parts` parts. `small` selects the narrow
 * networks; `alpha` sets the initial SDF sharpness (0 keeps the default).
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum HfStatus hf_generator_new(size_t parts,
                               bool small,
                               double alpha,
                               uint64_t seed,
                               struct HfGenerator **out);

/**
 * Loads the generator section of a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for a pointer write.
 */
enum HfStatus hf_generator_load(const char *path, struct HfGenerator **out);

/**
 * Saves the generator as a checkpoint.
 *
 * # Safety
 * `gen` must come from this library and `path` be a NUL-terminated string.
 */
enum HfStatus hf_generator_save(const struct HfGenerator *gen, const char *path);

/**
 * Latent code length.
 *
 * # Safety
 * `gen` must come from this library and `out` be writable.
 */
enum HfStatus hf_generator_latent_dim(const struct HfGenerator *gen, size_t *out);

/**
 * Current SDF sharpness alpha.
 *
 * # Safety
 * `gen` must come from this library and `out` be writable.
 */
enum HfStatus hf_generator_alpha(const struct HfGenerator *gen, double *out);

/**
 * Releases a generator. Null is ignored.
 *
 * # Safety
 * `gen` must be null or come from this library and not be used afterwards.
 */
void hf_generator_free(struct HfGenerator *gen);

/**
 * Renders the body from the frontal full-body camera. `theta` and `beta`
 * follow [`hf_body_pose_vertices`]; `z` holds the latent code (null with
 * length 0 for zeros). Writes `height * width * 3` row-major colors to
 * `rgb_out` and, when non-null, `height * width` opacities to `opacity_out`.
 *
 * # Safety
 * Pointers must be valid for the documented lengths.
 */
enum HfStatus hf_render(const struct HfGenerator *gen,
                        const struct HfBody *body,
                        const double *theta,
                        const double *beta,
                        size_t beta_len,
                        const double *z,
                        size_t z_len,
                        size_t width,
                        size_t height,
                        uint64_t seed,
                        double *rgb_out,
                        double *opacity_out);

/**
 * R1 weight of the default schedule at iteration `iter`.
 */
double hf_r1_schedule(uint64_t iter);

/**
 * Density for signed distance `d` at sharpness `alpha > 0`.
 *
 * # Safety
 * `out` must be writable.
 */
enum HfStatus hf_sdf_to_density(double d, double alpha, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HUMANFIELD_H */
