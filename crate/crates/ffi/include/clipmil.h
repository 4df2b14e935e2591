#ifndef CLIPMIL_H
#define CLIPMIL_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Label value for a bag without a label.
#define CLIPMIL_UNLABELED -1

typedef enum ClipmilStatus {
  CLIPMIL_STATUS_OK = 0,
  CLIPMIL_STATUS_NULL_POINTER = 1,
  CLIPMIL_STATUS_INVALID_ARGUMENT = 2,
  CLIPMIL_STATUS_IO = 3,
  CLIPMIL_STATUS_PARSE = 4,
  CLIPMIL_STATUS_TRAINING = 5,
  CLIPMIL_STATUS_DEGENERATE = 6,
  CLIPMIL_STATUS_PANIC = 7,
} ClipmilStatus;

// A growable set of bags used for training.
typedef struct ClipmilBags ClipmilBags;

// A trained model.
typedef struct ClipmilModel ClipmilModel;

// Summary statistics of a mono waveform.
typedef struct ClipmilAudioStats {
  double silence_fraction;
  double pitch_mean_hz;
  double pitch_std_hz;
  double voiced_fraction;
  double turns_per_minute;
} ClipmilAudioStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL,
// or 0 when the last call succeeded.
size_t clipmil_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *clipmil_version(void);

// Fleiss' kappa of a row-major `items × categories` count table.
enum ClipmilStatus clipmil_fleiss_kappa(const uint64_t *counts,
                                        size_t items,
                                        size_t categories,
                                        double *out);

// Expected positives among `k` viewed clips, at random and in model order.
enum ClipmilStatus clipmil_productivity(double f,
                                        double t,
                                        double n,
                                        double k,
                                        double *expected_random,
                                        double *expected_filtered);

// Audio statistics of `len` mono samples in [-1, 1] with default parameters.
enum ClipmilStatus clipmil_audio_stats(const double *samples,
                                       size_t len,
                                       uint32_t sample_rate,
                                       struct ClipmilAudioStats *out);

struct ClipmilBags *clipmil_bags_new(void);

void clipmil_bags_free(struct ClipmilBags *bags);

size_t clipmil_bags_len(const struct ClipmilBags *bags);

// Appends a bag of `n_instances` row-major instances. `label` is 1, 0 or
// `CLIPMIL_UNLABELED`.
enum ClipmilStatus clipmil_bags_push(struct ClipmilBags *bags,
                                     const char *clip_id,
                                     const double *instances,
                                     size_t n_instances,
                                     size_t dim,
                                     int label);

// Trains on the labeled bags. `config_json` is a learner configuration
// object or null for defaults.
enum ClipmilStatus clipmil_train(const struct ClipmilBags *bags,
                                 const char *config_json,
                                 struct ClipmilModel **out);

enum ClipmilStatus clipmil_model_from_json(const char *json, struct ClipmilModel **out);

enum ClipmilStatus clipmil_model_load(const char *path, struct ClipmilModel **out);

// Serializes a model; free the result with `clipmil_string_free`.
enum ClipmilStatus clipmil_model_to_json(const struct ClipmilModel *model, char **out);

void clipmil_model_free(struct ClipmilModel *model);

// Instance dimension the model expects, or 0 for a null model.
size_t clipmil_model_dim(const struct ClipmilModel *model);

// Scores one bag of row-major instances and reports the predicted label (1 or 0).
enum ClipmilStatus clipmil_model_score(const struct ClipmilModel *model,
                                       const double *instances,
                                       size_t n_instances,
                                       size_t dim,
                                       double *score,
                                       int *positive);

void clipmil_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLIPMIL_H */
