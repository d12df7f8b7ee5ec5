#ifndef MANIFOLD_DIFFUSION_H
#define MANIFOLD_DIFFUSION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MfdStatus {
  MFD_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or a buffer of the wrong length.
  MFD_STATUS_INVALID_ARGUMENT = 1,
  // A model or algorithm parameter is out of its domain.
  MFD_STATUS_INVALID_PARAMETER = 2,
  MFD_STATUS_UNSUPPORTED = 3,
  // No root or no speciation signal in the admissible range.
  MFD_STATUS_NO_SOLUTION = 4,
  // Solver, quadrature or integration failure.
  MFD_STATUS_NUMERICAL = 5,
  MFD_STATUS_PANIC = 6,
} MfdStatus;

// Method that produced a collapse time.
typedef enum MfdCollapseMethod {
  MFD_COLLAPSE_METHOD_GLM_GENERAL = 0,
  MFD_COLLAPSE_METHOD_LINEAR_ISOMETRY_CLOSED_FORM = 1,
  MFD_COLLAPSE_METHOD_LINEAR_RMT = 2,
} MfdCollapseMethod;

// Opaque dataset handle.
typedef struct MfdDataset MfdDataset;

// Opaque model handle.
typedef struct MfdModel MfdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *mfd_last_error(void);

// Library version as a static NUL-terminated string.
const char *mfd_version(void);

// Builds a model with center μ = m·1_p.
//
// `activation`: linear, tanh, relu or sigmoid; `ensemble`:
// gaussian_iid or isometry.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum MfdStatus mfd_model_new(size_t d,
                             size_t p,
                             double alpha,
                             double rho,
                             double m,
                             const char *activation,
                             const char *ensemble,
                             uint64_t seed,
                             struct MfdModel **out_model);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from [`mfd_model_new`] and not be used afterwards.
void mfd_model_free(struct MfdModel *model);

// # Safety
// `model` must be a live handle; outputs must be writable.
enum MfdStatus mfd_model_dims(const struct MfdModel *model, size_t *out_d, size_t *out_p);

// Finite-d and large-d speciation times.
//
// # Safety
// `model` must be a live handle; outputs must be writable.
enum MfdStatus mfd_speciation_time(const struct MfdModel *model,
                                   double *out_finite,
                                   double *out_asymptotic);

// Collapse time of the model at sample exponent `alpha`: isometric closed
// form for linear isometric models, Marchenko–Pastur for linear gaussian
// models, replica GLM otherwise.
//
// # Safety
// `model` must be a live handle; outputs must be writable.
enum MfdStatus mfd_collapse_time(const struct MfdModel *model,
                                 double alpha,
                                 double *out_t_c,
                                 enum MfdCollapseMethod *out_method);

// ½log(1 + 1/(e^{2α/β} − 1)).
//
// # Safety
// `out_t_c` must be writable.
enum MfdStatus mfd_collapse_time_linear_isometry(double alpha, double beta, double *out_t_c);

// # Safety
// `out_t_c` must be writable.
enum MfdStatus mfd_collapse_time_linear_rmt(double alpha, double beta, double *out_t_c);

// Large-d (1/d)log det(η FFᵀ/p + I) for i.i.d. gaussian F.
double mfd_mp_logdet(double eta, double beta);

// Draws `n` samples from the model.
//
// # Safety
// `model` must be a live handle; `out_dataset` must be writable.
enum MfdStatus mfd_dataset_sample(const struct MfdModel *model,
                                  size_t n,
                                  uint64_t seed,
                                  struct MfdDataset **out_dataset);

// Releases a dataset; null is ignored.
//
// # Safety
// `dataset` must come from [`mfd_dataset_sample`] and not be used afterwards.
void mfd_dataset_free(struct MfdDataset *dataset);

// # Safety
// `dataset` must be a live handle; `out_n` must be writable.
enum MfdStatus mfd_dataset_len(const struct MfdDataset *dataset, size_t *out_n);

// Copies ambient point `i` into `buf` (length must equal d).
//
// # Safety
// `buf` must point to `len` writable doubles.
enum MfdStatus mfd_dataset_point(const struct MfdDataset *dataset,
                                 size_t i,
                                 double *buf,
                                 size_t len);

// Empirical score at (x, t): writes the gradient into `grad` and the
// log-normalizer log Σ_i exp(−‖x − a_t x_i‖²/2h_t) into `out_log_norm`
// (which may be null).
//
// # Safety
// `x` and `grad` must point to `len` doubles, `len` equal to d.
enum MfdStatus mfd_empirical_score(const struct MfdDataset *dataset,
                                   const double *x,
                                   double t,
                                   double *grad,
                                   size_t len,
                                   double *out_log_norm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MANIFOLD_DIFFUSION_H */
