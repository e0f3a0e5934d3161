#ifndef ASYMCYCLE_H
#define ASYMCYCLE_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum AcCycleMode {
  AC_CYCLE_MODE_SYMMETRIC = 0,
  AC_CYCLE_MODE_ASYMMETRIC = 1,
} AcCycleMode;

typedef enum AcStatus {
  AC_STATUS_OK = 0,
  AC_STATUS_NULL_POINTER = 1,
  AC_STATUS_INVALID_ARGUMENT = 2,
  AC_STATUS_SHAPE = 3,
  AC_STATUS_IO = 4,
  AC_STATUS_CORRUPT = 5,
  AC_STATUS_EMPTY = 6,
  AC_STATUS_PANIC = 7,
  AC_STATUS_OTHER = 8,
} AcStatus;

// Synthetic phantom cohort.
typedef struct AcCohort AcCohort;

// Trained translator bundle.
typedef struct AcModel AcModel;

// Slice metadata. `severity`: 0 healthy, 1 moderate, 2 severe.
// `pathological` is true for X-domain slices.
typedef struct AcSliceInfo {
  size_t height;
  size_t width;
  size_t slice_index;
  int32_t severity;
  bool pathological;
  bool has_twin;
} AcSliceInfo;

typedef struct AcThresholds {
  double t_low;
  double t_high;
  double dsc;
} AcThresholds;

typedef struct AcWilcoxon {
  size_t n;
  double w_plus;
  double p_two_sided;
  double p_greater;
  double p_less;
  bool exact;
  bool degenerate;
} AcWilcoxon;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ac_version(void);

// Message of the last failed call on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *ac_last_error_message(void);

// Loads a model bundle written by the training pipeline.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum AcStatus ac_model_load(const char *path, struct AcModel **out);

// Loads a model bundle from an in-memory archive.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out` must be writable.
enum AcStatus ac_model_from_bytes(const uint8_t *bytes, size_t len, struct AcModel **out);

// Side length of the square images the model accepts, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t ac_model_image_size(const struct AcModel *model);

// Translates a pathological image into its pseudo-healthy counterpart.
//
// # Safety
// `pixels` and `out` must each hold `height * width` floats.
enum AcStatus ac_model_to_healthy(const struct AcModel *model,
                                  const float *pixels,
                                  size_t height,
                                  size_t width,
                                  float *out);

// # Safety
// `model` must be null or a handle not yet freed.
void ac_model_free(struct AcModel *model);

// Generates the default phantom cohort at the given size and seed.
//
// # Safety
// `out` must be writable.
enum AcStatus ac_cohort_generate(uint64_t seed, size_t image_size, struct AcCohort **out);

// Number of slices (X and Y domains, without twins).
//
// # Safety
// `cohort` must be null or a live handle.
size_t ac_cohort_len(const struct AcCohort *cohort);

// # Safety
// `cohort` must be a live handle and `out` writable.
enum AcStatus ac_cohort_slice_info(const struct AcCohort *cohort,
                                   size_t index,
                                   struct AcSliceInfo *out);

// Copies a slice's pixels and masks. Any output pointer may be null to
// skip it; non-null ones must hold `height * width` elements.
//
// # Safety
// See above.
enum AcStatus ac_cohort_slice_data(const struct AcCohort *cohort,
                                   size_t index,
                                   float *pixels,
                                   uint8_t *muscle_mask,
                                   uint8_t *infiltration_mask);

// # Safety
// `cohort` must be null or a handle not yet freed.
void ac_cohort_free(struct AcCohort *cohort);

// Dice overlap of two masks of `n` bytes; 1 when both are empty.
//
// # Safety
// `a` and `b` must hold `n` bytes; `out` must be writable.
enum AcStatus ac_dsc(const uint8_t *a, const uint8_t *b, size_t n, double *out);

// Intensity band `[t_low, t_high]` maximizing overlap with the mask after
// quantizing to `levels` gray levels.
//
// # Safety
// `pixels` and `mask` must hold `height * width` elements; `out` writable.
enum AcStatus ac_optimal_two_threshold(const float *pixels,
                                       const uint8_t *mask,
                                       size_t height,
                                       size_t width,
                                       size_t levels,
                                       struct AcThresholds *out);

// Paired signed-rank test on `a - b`.
//
// # Safety
// `a` and `b` must hold `n` doubles; `out` writable.
enum AcStatus ac_wilcoxon(const double *a, const double *b, size_t n, struct AcWilcoxon *out);

// Cycle-consistency value for one sample of `n` values per image. The
// X-side arrays are ignored (and may be null) in asymmetric mode.
//
// # Safety
// Non-null arrays must hold `n` floats; `out` writable.
enum AcStatus ac_cycle_loss(enum AcCycleMode mode,
                            double w_c,
                            const float *recon_y,
                            const float *y,
                            const float *recon_x,
                            const float *x,
                            size_t n,
                            double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ASYMCYCLE_H */
