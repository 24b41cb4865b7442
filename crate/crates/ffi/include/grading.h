#ifndef GRADING_H
#define GRADING_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GradingStatus {
  GRADING_STATUS_OK = 0,
  GRADING_STATUS_NULL_POINTER = 1,
  GRADING_STATUS_INVALID_ARGUMENT = 2,
  GRADING_STATUS_EPISODE_FINISHED = 3,
  GRADING_STATUS_BUFFER_TOO_SMALL = 4,
  GRADING_STATUS_DEGENERATE_DISTRIBUTION = 5,
  GRADING_STATUS_IO = 6,
  GRADING_STATUS_INTERNAL = 7,
} GradingStatus;

/**
 * Opaque environment handle.
 */
typedef struct GradingEnv GradingEnv;

typedef struct GradingStep {
  double reward;
  double f_v;
  double f_t;
  double f_h;
  double done_bonus;
  double fail_penalty;
  /**
   * Seconds of simulated motion for this step.
   */
  double duration;
  uint8_t done;
  uint8_t failed;
} GradingStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an environment and resets it to `seed`.
 *
 * `config_toml` may be null for defaults. `family` is a preset name
 * (`init`, `edge`, `continuous`, `random`); null means `init`.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum GradingStatus grading_env_new(const char *config_toml,
                                   const char *family,
                                   uint64_t seed,
                                   struct GradingEnv **out);

/**
 * # Safety
 * `env` must come from `grading_env_new` and not be used afterwards.
 */
void grading_env_free(struct GradingEnv *env);

/**
 * # Safety
 * `env` must be a live handle.
 */
enum GradingStatus grading_env_reset(struct GradingEnv *env, uint64_t seed);

/**
 * Observation shape (down-sampled rows and columns).
 *
 * # Safety
 * `env` must be a live handle; `rows` and `cols` writable.
 */
enum GradingStatus grading_env_obs_shape(const struct GradingEnv *env, size_t *rows, size_t *cols);

/**
 * Copies the current observation, row-major, into `buf`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum GradingStatus grading_env_observation(const struct GradingEnv *env, double *buf, size_t len);

/**
 * Executes one waypoint action. `out` may be null.
 *
 * # Safety
 * `env` must be a live handle; `out` null or writable.
 */
enum GradingStatus grading_env_step(struct GradingEnv *env,
                                    int64_t p_row,
                                    int64_t p_col,
                                    int64_t s_row,
                                    int64_t s_col,
                                    struct GradingStep *out);

/**
 * Multiplies two policy heads (each `len` = rows*cols values) by the
 * environment's Gaussian mask and renormalizes them in place.
 *
 * # Safety
 * `p` and `s` must each hold `len` doubles.
 */
enum GradingStatus grading_apply_mask(const struct GradingEnv *env,
                                      double *p,
                                      double *s,
                                      size_t len);

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `len`. Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or hold `len` bytes.
 */
size_t grading_last_error(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRADING_H */
