#ifndef TTIME_H
#define TTIME_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Ensemble combination rule.
 */
typedef enum TtimeEnsemble {
  TTIME_ENSEMBLE_SML_SOFT = 0,
  TTIME_ENSEMBLE_SML_HARD = 1,
  TTIME_ENSEMBLE_AVERAGE = 2,
  TTIME_ENSEMBLE_VOTE = 3,
} TtimeEnsemble;

/**
 * Result code of every exported function.
 */
typedef enum TtimeStatus {
  TTIME_STATUS_OK = 0,
  TTIME_STATUS_NULL_POINTER = 1,
  TTIME_STATUS_INVALID_CONFIG = 2,
  TTIME_STATUS_SHAPE = 3,
  TTIME_STATUS_LABEL = 4,
  TTIME_STATUS_NUMERICAL = 5,
  TTIME_STATUS_STATE = 6,
  TTIME_STATUS_EMPTY_INPUT = 7,
  TTIME_STATUS_IO = 8,
  TTIME_STATUS_FORMAT = 9,
  TTIME_STATUS_METRIC = 10,
  TTIME_STATUS_PANIC = 255,
} TtimeStatus;

/**
 * A streaming engine bound to one target stream.
 */
typedef struct TtimeEngine TtimeEngine;

/**
 * Labeled source subjects collected before training.
 */
typedef struct TtimeSource TtimeSource;

/**
 * Adaptation settings; start from [`ttime_config_default`].
 */
typedef struct TtimeConfig {
  /**
   * Ensemble size `M`.
   */
  uint32_t n_models;
  /**
   * Sliding window size `B`.
   */
  uint32_t window;
  double temperature;
  double tau;
  double c;
  double lr;
  enum TtimeEnsemble ensemble;
  bool cem;
  bool mdr;
  bool temperature_scaling;
  bool recalibrate;
  bool exact_sml;
  uint64_t seed;
} TtimeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ttime_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library on the same thread.
 */
const char *ttime_last_error_message(void);

/**
 * Fills `out` with the default settings (M=5, B=8, T=2, τ=0.7, c=4).
 *
 * # Safety
 * `out` must be null or point to writable memory for one `TtimeConfig`.
 */
enum TtimeStatus ttime_config_default(struct TtimeConfig *out);

/**
 * Creates an empty source collection for `channels × samples` trials.
 *
 * # Safety
 * `out` must be null or point to writable memory for one pointer.
 */
enum TtimeStatus ttime_source_new(uint32_t channels, uint32_t samples, struct TtimeSource **out);

/**
 * Adds one labeled subject: `data` holds `n_trials` trials, each
 * channel-major (`channels × samples` values); `labels` holds one class
 * index per trial.
 *
 * # Safety
 * `source` must come from [`ttime_source_new`]; `data` and `labels` must
 * point to the stated number of elements.
 */
enum TtimeStatus ttime_source_add_subject(struct TtimeSource *source,
                                          const double *data,
                                          const uint32_t *labels,
                                          uintptr_t n_trials);

/**
 * # Safety
 * `source` must be null or come from [`ttime_source_new`], and is invalid
 * afterwards.
 */
void ttime_source_free(struct TtimeSource *source);

/**
 * Aligns and pools the source subjects, trains `config.n_models` members
 * for `epochs` epochs (0 selects the default of 100), and returns a fresh
 * engine.
 *
 * # Safety
 * `source` must come from [`ttime_source_new`]; `config` must point to a
 * valid `TtimeConfig`; `out` must point to writable memory for one pointer.
 */
enum TtimeStatus ttime_engine_train(const struct TtimeSource *source,
                                    const struct TtimeConfig *config,
                                    uint32_t epochs,
                                    struct TtimeEngine **out);

/**
 * Builds an engine from `n_paths` checkpoint files; the first
 * `config.n_models` are used.
 *
 * # Safety
 * `config` must point to a valid `TtimeConfig`; `paths` must hold
 * `n_paths` NUL-terminated UTF-8 strings; `out` must point to writable
 * memory for one pointer.
 */
enum TtimeStatus ttime_engine_load(const struct TtimeConfig *config,
                                   const char *const *paths,
                                   uintptr_t n_paths,
                                   struct TtimeEngine **out);

/**
 * # Safety
 * `engine` must be null or come from a `ttime_engine_*` constructor, and
 * is invalid afterwards.
 */
void ttime_engine_free(struct TtimeEngine *engine);

/**
 * Number of classes the engine predicts.
 *
 * # Safety
 * `engine` must come from a `ttime_engine_*` constructor; `out` must
 * point to writable memory.
 */
enum TtimeStatus ttime_engine_n_classes(const struct TtimeEngine *engine, uint32_t *out);

/**
 * Predicts one trial (channel-major, `len` = channels × samples values),
 * then adapts the ensemble if updates are enabled. Writes the label to
 * `label_out` and, when `scores_out` is non-null, the `n_scores` first
 * combined class scores.
 *
 * # Safety
 * `engine` must come from a `ttime_engine_*` constructor; `data` must hold
 * `len` values; `label_out` must be writable; `scores_out` must be null or
 * hold `n_scores` writable values.
 */
enum TtimeStatus ttime_engine_process_trial(struct TtimeEngine *engine,
                                            const double *data,
                                            uintptr_t len,
                                            uint32_t *label_out,
                                            double *scores_out,
                                            uintptr_t n_scores);

/**
 * Starts a new session: alignment statistics and the ensemble history are
 * dropped; adapted models are kept.
 *
 * # Safety
 * `engine` must come from a `ttime_engine_*` constructor.
 */
enum TtimeStatus ttime_engine_reset(struct TtimeEngine *engine);

/**
 * Enables or disables the post-prediction model updates.
 *
 * # Safety
 * `engine` must come from a `ttime_engine_*` constructor.
 */
enum TtimeStatus ttime_engine_set_updates(struct TtimeEngine *engine, bool enabled);

/**
 * Area under the ROC curve of `scores` against binary `labels` (non-zero
 * is positive).
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be writable.
 */
enum TtimeStatus ttime_auc(const double *scores, const uint8_t *labels, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TTIME_H */
