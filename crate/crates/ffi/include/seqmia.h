#ifndef SEQMIA_H
#define SEQMIA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SqmiStatus {
  SQMI_STATUS_OK = 0,
  SQMI_STATUS_NULL_POINTER = 1,
  // Bad input data, flags or file contents.
  SQMI_STATUS_INVALID = 2,
  SQMI_STATUS_IO = 3,
  // Numerical failure during a fit.
  SQMI_STATUS_DEGENERATE = 4,
  // Output buffer shorter than required.
  SQMI_STATUS_BUFFER_TOO_SMALL = 5,
  SQMI_STATUS_PANIC = 6,
} SqmiStatus;

typedef enum SqmiCovModel {
  SQMI_COV_MODEL_ISOTROPIC = 0,
  SQMI_COV_MODEL_DIAGONAL_RANDOM = 1,
  SQMI_COV_MODEL_DENSE = 2,
  SQMI_COV_MODEL_AR1 = 3,
} SqmiCovModel;

typedef enum SqmiShiftPattern {
  SQMI_SHIFT_PATTERN_CONSTANT = 0,
  SQMI_SHIFT_PATTERN_ALTERNATING = 1,
  SQMI_SHIFT_PATTERN_RANDOM = 2,
} SqmiShiftPattern;

typedef enum SqmiEstimator {
  SQMI_ESTIMATOR_UNIVARIATE = 0,
  SQMI_ESTIMATOR_INDEPENDENT = 1,
  SQMI_ESTIMATOR_OAS = 2,
  SQMI_ESTIMATOR_FULL = 3,
} SqmiEstimator;

typedef enum SqmiPooling {
  SQMI_POOLING_CLASS_WISE = 0,
  SQMI_POOLING_SHARED = 1,
} SqmiPooling;

typedef enum SqmiReduction {
  SQMI_REDUCTION_NONE = 0,
  SQMI_REDUCTION_GROUP = 1,
  SQMI_REDUCTION_MIN_K = 2,
  SQMI_REDUCTION_MAX_K = 3,
} SqmiReduction;

typedef enum SqmiTransform {
  SQMI_TRANSFORM_IDENTITY = 0,
  SQMI_TRANSFORM_NEGATE = 1,
  SQMI_TRANSFORM_LOGIT = 2,
} SqmiTransform;

typedef struct SqmiAttackResult SqmiAttackResult;

typedef struct SqmiDataset SqmiDataset;

// Parameters of the synthetic generator. `param_a` and `param_b` depend on
// the covariance model: (sigma2, unused) for isotropic, (low, high) for
// diagonal, (condition, scale spread) for dense, (sigma2, rho) for AR(1).
typedef struct SqmiSynthParams {
  size_t models;
  size_t canaries;
  size_t tokens;
  enum SqmiCovModel cov_model;
  double param_a;
  double param_b;
  double shift;
  enum SqmiShiftPattern pattern;
  // Values <= 0 give IN and OUT the same covariance.
  double in_scale;
  uint64_t seed;
} SqmiSynthParams;

typedef struct SqmiAttackConfig {
  enum SqmiEstimator estimator;
  enum SqmiPooling pooling;
  enum SqmiReduction reduction;
  // Group size or k; ignored for `None`.
  size_t reduction_param;
  enum SqmiTransform transform;
  // 0 uses every available shadow model.
  size_t max_shadow_models;
  uint64_t seed;
} SqmiAttackConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *sqmi_last_error(void);

// Library version as a static NUL-terminated string.
const char *sqmi_version(void);

// Loads a `.sqmi` container or a CSV fixture directory.
enum SqmiStatus sqmi_dataset_load(const char *path, struct SqmiDataset **out);

// Builds a dataset from a row-major `[models, canaries, tokens]` score
// array and a `[models, canaries]` 0/1 mask. Both arrays are copied.
enum SqmiStatus sqmi_dataset_from_arrays(const double *scores,
                                         const uint8_t *mask,
                                         size_t models,
                                         size_t canaries,
                                         size_t tokens,
                                         struct SqmiDataset **out);

// Generates a synthetic fixture.
enum SqmiStatus sqmi_synth(const struct SqmiSynthParams *params, struct SqmiDataset **out);

// Writes the dataset as a `.sqmi` container.
enum SqmiStatus sqmi_dataset_save(const struct SqmiDataset *ds, const char *path);

enum SqmiStatus sqmi_dataset_dims(const struct SqmiDataset *ds,
                                  size_t *models,
                                  size_t *canaries,
                                  size_t *tokens);

void sqmi_dataset_free(struct SqmiDataset *ds);

// OAS estimator, shared pooling, no reduction, identity transform, all
// shadow models, seed 0.
struct SqmiAttackConfig sqmi_attack_config_default(void);

// Runs the leave-one-out attack. The result holds `models * canaries`
// cells in (target, canary) row-major order.
enum SqmiStatus sqmi_run_attack(const struct SqmiDataset *ds,
                                const struct SqmiAttackConfig *config,
                                struct SqmiAttackResult **out);

// Number of cells in the result, or 0 for a null handle.
size_t sqmi_result_len(const struct SqmiAttackResult *r);

enum SqmiStatus sqmi_result_copy_scores(const struct SqmiAttackResult *r,
                                        double *buf,
                                        size_t capacity);

// Membership labels as 0/1 bytes.
enum SqmiStatus sqmi_result_copy_labels(const struct SqmiAttackResult *r,
                                        uint8_t *buf,
                                        size_t capacity);

// Fallback codes: 0 none, 1 pooled refit, 2 uninformative score.
enum SqmiStatus sqmi_result_copy_flags(const struct SqmiAttackResult *r,
                                       uint8_t *buf,
                                       size_t capacity);

void sqmi_result_free(struct SqmiAttackResult *r);

// Area under the ROC curve of `len` scores with 0/1 labels.
enum SqmiStatus sqmi_auc(const double *scores, const uint8_t *labels, size_t len, double *out);

// Largest TPR whose FPR does not exceed `fpr_target`.
enum SqmiStatus sqmi_tpr_at_fpr(const double *scores,
                                const uint8_t *labels,
                                size_t len,
                                double fpr_target,
                                double *out);

// Number of points on the ROC curve, for sizing the buffers passed to
// `sqmi_roc`.
enum SqmiStatus sqmi_roc_len(const double *scores, const uint8_t *labels, size_t len, size_t *out);

// Writes the ROC curve into three buffers of `capacity` elements each.
// The last threshold is negative infinity.
enum SqmiStatus sqmi_roc(const double *scores,
                         const uint8_t *labels,
                         size_t len,
                         double *thresholds,
                         double *fpr,
                         double *tpr,
                         size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQMIA_H */
