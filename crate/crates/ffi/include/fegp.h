/* Generated by cbindgen from crates/ffi. Do not edit. */

#ifndef FEGP_H
#define FEGP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FegpStatus {
  FEGP_STATUS_OK = 0,
  FEGP_STATUS_NULL_POINTER = 1,
  FEGP_STATUS_INVALID_ARGUMENT = 2,
  FEGP_STATUS_INSUFFICIENT_HISTORY = 3,
  FEGP_STATUS_NUMERICAL = 4,
  FEGP_STATUS_IO = 5,
  FEGP_STATUS_PARSE = 6,
  FEGP_STATUS_PANIC = 7,
} FegpStatus;

/**
 * Posterior mixture for one forecast slot, in raw traffic units.
 */
typedef struct FegpMixture FegpMixture;

/**
 * Trained feature-embedded model together with its daily baseline.
 */
typedef struct FegpModel FegpModel;

/**
 * Traffic series with a fixed slot width.
 */
typedef struct FegpSeries FegpSeries;

typedef struct FegpComponent {
  double mu;
  double var;
  /**
   * Training index the component was conditioned on.
   */
  size_t source_index;
} FegpComponent;

typedef struct FegpRisk {
  double prob_below;
  double prob_within;
  double prob_above;
} FegpRisk;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if none failed.
 * Valid until the next failing call on the same thread.
 */
const char *fegp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fegp_version(void);

/**
 * Copies `len` values into a new series with the given slot width.
 *
 * # Safety
 * `values` must point to `len` readable doubles; `out` must be writable.
 */
enum FegpStatus fegp_series_new(const double *values,
                                size_t len,
                                int64_t slot_minutes,
                                struct FegpSeries **out);

/**
 * Synthetic spiky series from the default generator settings with the given
 * seed and length in days.
 *
 * # Safety
 * `out` must be writable.
 */
enum FegpStatus fegp_series_synthesize(uint64_t seed, size_t days, struct FegpSeries **out);

/**
 * Number of values, or 0 for a null handle.
 *
 * # Safety
 * `series` must be null or a live handle.
 */
size_t fegp_series_len(const struct FegpSeries *series);

/**
 * Copies up to `cap` values into `buf` and stores the count in `written`.
 *
 * # Safety
 * `buf` must have room for `cap` doubles; `written` must be writable.
 */
enum FegpStatus fegp_series_copy_values(const struct FegpSeries *series,
                                        double *buf,
                                        size_t cap,
                                        size_t *written);

/**
 * # Safety
 * `series` must be null or a handle not yet freed.
 */
void fegp_series_free(struct FegpSeries *series);

/**
 * Trains the feature-embedded model on `series[..train_end]` with default
 * settings. `train_end` must cover at least one whole day and leave at
 * least one value after it.
 *
 * # Safety
 * `series` must be a live handle; `out` must be writable.
 */
enum FegpStatus fegp_model_train(const struct FegpSeries *series,
                                 size_t train_end,
                                 uint64_t seed,
                                 struct FegpModel **out);

/**
 * Parses a model document produced by `fegp_model_to_json` or `fegp train`.
 *
 * # Safety
 * `json` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum FegpStatus fegp_model_from_json(const char *json, struct FegpModel **out);

/**
 * Serializes the model; release the string with `fegp_string_free`.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum FegpStatus fegp_model_to_json(const struct FegpModel *model, char **out);

/**
 * Number of points in the model's training window.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t fegp_model_window_len(const struct FegpModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void fegp_model_free(struct FegpModel *model);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void fegp_string_free(char *s);

/**
 * Posterior for slot `t` of `series`, reading only values before `t`.
 *
 * # Safety
 * `model` and `series` must be live handles; `out` must be writable.
 */
enum FegpStatus fegp_model_forecast(const struct FegpModel *model,
                                    const struct FegpSeries *series,
                                    size_t t,
                                    struct FegpMixture **out);

/**
 * Number of components, or 0 for a null handle.
 *
 * # Safety
 * `mixture` must be null or a live handle.
 */
size_t fegp_mixture_len(const struct FegpMixture *mixture);

/**
 * # Safety
 * `mixture` must be a live handle; `out` must be writable.
 */
enum FegpStatus fegp_mixture_component(const struct FegpMixture *mixture,
                                       size_t i,
                                       struct FegpComponent *out);

/**
 * # Safety
 * `mixture` must be a live handle; `out` must be writable.
 */
enum FegpStatus fegp_mixture_pdf(const struct FegpMixture *mixture, double x, double *out);

/**
 * # Safety
 * `mixture` must be a live handle; `out` must be writable.
 */
enum FegpStatus fegp_mixture_cdf(const struct FegpMixture *mixture, double x, double *out);

/**
 * Most probable value of the mixture.
 *
 * # Safety
 * `mixture` must be a live handle; `out` must be writable.
 */
enum FegpStatus fegp_mixture_map(const struct FegpMixture *mixture, double *out);

/**
 * Probability mass below, inside and above `[low, high]`.
 *
 * # Safety
 * `mixture` must be a live handle; `out` must be writable.
 */
enum FegpStatus fegp_mixture_risk(const struct FegpMixture *mixture,
                                  double low,
                                  double high,
                                  struct FegpRisk *out);

/**
 * # Safety
 * `mixture` must be null or a handle not yet freed.
 */
void fegp_mixture_free(struct FegpMixture *mixture);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEGP_H */
