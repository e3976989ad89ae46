#ifndef RECURSEG_H
#define RECURSEG_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RecursegRefineMode {
  RECURSEG_REFINE_MODE_NONE = 0,
  RECURSEG_REFINE_MODE_SHRINK = 1,
  RECURSEG_REFINE_MODE_GROW = 2,
  RECURSEG_REFINE_MODE_OBJECTNESS = 3,
} RecursegRefineMode;

typedef enum RecursegRole {
  /**
   * Has a pixel mask.
   */
  RECURSEG_ROLE_PIXEL = 0,
  /**
   * Has an image-level label only.
   */
  RECURSEG_ROLE_IMAGE = 1,
  RECURSEG_ROLE_UNLABELED = 2,
} RecursegRole;

/**
 * Result of every call.
 */
typedef enum RecursegStatus {
  RECURSEG_STATUS_OK = 0,
  RECURSEG_STATUS_NULL_POINTER = 1,
  RECURSEG_STATUS_INVALID_ARGUMENT = 2,
  RECURSEG_STATUS_SHAPE_MISMATCH = 3,
  RECURSEG_STATUS_IO = 4,
  RECURSEG_STATUS_PARSE = 5,
  RECURSEG_STATUS_CONFIG = 6,
  RECURSEG_STATUS_CHECKPOINT = 7,
  RECURSEG_STATUS_STATE = 8,
  RECURSEG_STATUS_REVIEW = 9,
  RECURSEG_STATUS_INTERNAL = 10,
  RECURSEG_STATUS_PANIC = 11,
} RecursegStatus;

/**
 * A validated dataset manifest.
 */
typedef struct RecursegManifest RecursegManifest;

/**
 * A trained segmentation network.
 */
typedef struct RecursegModel RecursegModel;

/**
 * Review service bound to one experiment directory.
 */
typedef struct RecursegReview RecursegReview;

typedef struct RecursegMetrics {
  double dice;
  double iou;
  double precision;
  double recall;
} RecursegMetrics;

typedef struct RecursegFhConfig {
  double scale_k;
  size_t min_size;
  double smoothing_sigma;
  /**
   * 4 or 8.
   */
  uint8_t connectivity;
} RecursegFhConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on this thread.
 */
const char *recurseg_last_error(void);

/**
 * Library version, static.
 */
const char *recurseg_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void recurseg_string_free(char *s);

/**
 * Pixel-averaged cross-entropy of `pred` (`height*width*channels`
 * probabilities) against the label mask `target` (`height*width` class
 * indices below `channels`).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum RecursegStatus recurseg_cross_entropy(const double *pred,
                                           const uint8_t *target,
                                           size_t height,
                                           size_t width,
                                           size_t channels,
                                           double log_epsilon,
                                           double *out_loss);

/**
 * Soft dice loss averaged over foreground classes.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum RecursegStatus recurseg_dice_loss(const double *pred,
                                       const uint8_t *target,
                                       size_t height,
                                       size_t width,
                                       size_t channels,
                                       double smoothing,
                                       double *out_loss);

/**
 * Cross-entropy plus `dice_weight` times dice when `has_pixel_gt`.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum RecursegStatus recurseg_combined_loss(const double *pred,
                                           const uint8_t *target,
                                           size_t height,
                                           size_t width,
                                           size_t channels,
                                           bool has_pixel_gt,
                                           double dice_weight,
                                           double smoothing,
                                           double log_epsilon,
                                           double *out_loss);

/**
 * Any-bleed overlap metrics of two label masks. `class_index` 0 treats
 * every non-zero label as foreground; otherwise only that class counts.
 *
 * # Safety
 * `pred` and `gt` must hold `height*width` values.
 */
enum RecursegStatus recurseg_binary_metrics(const uint8_t *pred,
                                            const uint8_t *gt,
                                            size_t height,
                                            size_t width,
                                            uint8_t class_index,
                                            struct RecursegMetrics *out_metrics);

struct RecursegFhConfig recurseg_fh_default_config(void);

/**
 * Graph-based superpixels. Intensities are used as given (`scale_k`
 * defaults assume `[0, 255]`). Writes one component id per pixel into
 * `out_labels`.
 *
 * # Safety
 * `image` and `out_labels` must hold `height*width` values.
 */
enum RecursegStatus recurseg_fh_segment(const float *image,
                                        size_t height,
                                        size_t width,
                                        struct RecursegFhConfig config,
                                        uint32_t *out_labels,
                                        size_t *out_n_components);

/**
 * Refines a label mask against the superpixels of `image` (intensities in
 * `[0, 1]`).
 *
 * # Safety
 * `mask`, `image` and `out_mask` must hold `height*width` values.
 */
enum RecursegStatus recurseg_refine(const uint8_t *mask,
                                    const float *image,
                                    size_t height,
                                    size_t width,
                                    struct RecursegFhConfig config,
                                    enum RecursegRefineMode mode,
                                    double coverage,
                                    uint8_t *out_mask);

/**
 * Loads a checkpoint written by the pipeline.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_model` a valid pointer.
 */
enum RecursegStatus recurseg_model_load(const char *path, struct RecursegModel **out_model);

/**
 * Output channels (classes plus background).
 *
 * # Safety
 * `model` must come from [`recurseg_model_load`].
 */
enum RecursegStatus recurseg_model_num_channels(const struct RecursegModel *model,
                                                size_t *out_channels);

/**
 * Argmax mask and per-pixel confidence for an image in `[0, 1]`.
 * `out_confidence` may be null.
 *
 * # Safety
 * Buffers must hold `height*width` values.
 */
enum RecursegStatus recurseg_model_predict(const struct RecursegModel *model,
                                           const float *image,
                                           size_t height,
                                           size_t width,
                                           uint8_t *out_mask,
                                           float *out_confidence);

/**
 * # Safety
 * `model` must come from [`recurseg_model_load`] and not be used again.
 */
void recurseg_model_free(struct RecursegModel *model);

/**
 * Loads and validates a JSON-lines manifest; referenced files must exist.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_manifest` a valid pointer.
 */
enum RecursegStatus recurseg_manifest_load(const char *path,
                                           struct RecursegManifest **out_manifest);

/**
 * # Safety
 * `manifest` must come from [`recurseg_manifest_load`].
 */
enum RecursegStatus recurseg_manifest_len(const struct RecursegManifest *manifest, size_t *out_len);

/**
 * Number of records with the given role.
 *
 * # Safety
 * `manifest` must come from [`recurseg_manifest_load`].
 */
enum RecursegStatus recurseg_manifest_count(const struct RecursegManifest *manifest,
                                            enum RecursegRole role,
                                            size_t *out_count);

/**
 * Record `index` as a JSON object (resolved paths).
 *
 * # Safety
 * `manifest` must come from [`recurseg_manifest_load`]; free the string
 * with [`recurseg_string_free`].
 */
enum RecursegStatus recurseg_manifest_record_json(const struct RecursegManifest *manifest,
                                                  size_t index,
                                                  char **out_json);

/**
 * # Safety
 * `manifest` must come from [`recurseg_manifest_load`] and not be used again.
 */
void recurseg_manifest_free(struct RecursegManifest *manifest);

/**
 * Opens the review service of `experiment_dir`. `classes` is a
 * comma-separated list of foreground class names, or null for the
 * default taxonomy.
 *
 * # Safety
 * Strings must be NUL-terminated; `out_review` a valid pointer.
 */
enum RecursegStatus recurseg_review_new(const char *experiment_dir,
                                        const char *classes,
                                        struct RecursegReview **out_review);

/**
 * Opens a session over the candidates of `recursion`; writes
 * `{"session_id", "queue_len"}` as JSON.
 *
 * # Safety
 * `review` must come from [`recurseg_review_new`].
 */
enum RecursegStatus recurseg_review_open_session(const struct RecursegReview *review,
                                                 uint32_t recursion,
                                                 char **out_json);

/**
 * Next undecided candidate as JSON (`{"status": "candidate", ...}` or
 * `{"status": "done"}`).
 *
 * # Safety
 * `review` must come from [`recurseg_review_new`].
 */
enum RecursegStatus recurseg_review_next(const struct RecursegReview *review,
                                         const char *session_id,
                                         char **out_json);

/**
 * Records an accept or reject verdict. `out_json` receives the
 * acknowledgement and may be null.
 *
 * # Safety
 * Strings must be NUL-terminated; `review` from [`recurseg_review_new`].
 */
enum RecursegStatus recurseg_review_decide(const struct RecursegReview *review,
                                           const char *session_id,
                                           const char *sample_id,
                                           bool accept,
                                           const char *reviewer,
                                           char **out_json);

/**
 * Closes the session; writes its summary (`accepted`, `rejected`,
 * `undecided`) as JSON.
 *
 * # Safety
 * Strings must be NUL-terminated; `review` from [`recurseg_review_new`].
 */
enum RecursegStatus recurseg_review_close(const struct RecursegReview *review,
                                          const char *session_id,
                                          char **out_json);

/**
 * # Safety
 * `review` must come from [`recurseg_review_new`] and not be used again.
 */
void recurseg_review_free(struct RecursegReview *review);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECURSEG_H */
