#ifndef FRESH_H
#define FRESH_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FreshStatus {
  FRESH_STATUS_OK = 0,
  FRESH_STATUS_NULL_ARGUMENT = 1,
  FRESH_STATUS_INVALID_ARGUMENT = 2,
  FRESH_STATUS_BUFFER_TOO_SMALL = 3,
  FRESH_STATUS_CONFIG = 4,
  FRESH_STATUS_NUMERIC = 5,
  FRESH_STATUS_IO = 6,
  FRESH_STATUS_FORMAT = 7,
  FRESH_STATUS_INTERNAL = 8,
} FreshStatus;

/**
 * An environment instance.
 */
typedef struct FreshEnv FreshEnv;

/**
 * A trained feedback-network ensemble.
 */
typedef struct FreshFnn FreshFnn;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to fit) and returns its full length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `capacity` writable bytes.
 */
size_t fresh_last_error_message(char *buf, size_t capacity);

/**
 * Creates the environment named `name` ("aimline" or "gaterun") with default settings.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FreshStatus fresh_env_create(const char *name, struct FreshEnv **out);

/**
 * # Safety
 * `env` must come from `fresh_env_create` and not be used afterwards.
 */
void fresh_env_free(struct FreshEnv *env);

/**
 * # Safety
 * `env` must be a live handle.
 */
size_t fresh_env_observation_dim(const struct FreshEnv *env);

/**
 * # Safety
 * `env` must be a live handle.
 */
size_t fresh_env_action_count(const struct FreshEnv *env);

/**
 * Starts an episode on the layout generated by `seed` and writes the first observation.
 *
 * # Safety
 * `env` must be a live handle and `obs` must have room for `obs_capacity` values.
 */
enum FreshStatus fresh_env_reset(struct FreshEnv *env,
                                 uint64_t seed,
                                 double *obs,
                                 size_t obs_capacity);

/**
 * Applies `action`, writing the next observation, the reward and whether the episode ended.
 *
 * # Safety
 * `env` must be a live handle; `obs` must have room for `obs_capacity`
 * values; `reward` and `terminal` must be valid pointers.
 */
enum FreshStatus fresh_env_step(struct FreshEnv *env,
                                size_t action,
                                double *obs,
                                size_t obs_capacity,
                                double *reward,
                                bool *terminal);

/**
 * Loads a feedback network saved by the trainer (`checkpoint/fnn.bin`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FreshStatus fresh_fnn_load(const char *path, struct FreshFnn **out);

/**
 * # Safety
 * `fnn` must come from `fresh_fnn_load` and not be used afterwards.
 */
void fresh_fnn_free(struct FreshFnn *fnn);

/**
 * # Safety
 * `fnn` must be a live handle.
 */
size_t fresh_fnn_action_count(const struct FreshFnn *fnn);

/**
 * Ensemble prediction for one observation: mean action probabilities,
 * mean good-state probability and both confidences.
 *
 * # Safety
 * `fnn` must be a live handle, `obs` must hold `obs_len` values,
 * `action_probs` must have room for `probs_capacity` values, and the
 * remaining outputs must be valid pointers.
 */
enum FreshStatus fresh_fnn_predict(const struct FreshFnn *fnn,
                                   const double *obs,
                                   size_t obs_len,
                                   double *action_probs,
                                   size_t probs_capacity,
                                   double *state_prob,
                                   double *confidence_action,
                                   double *confidence_state);

/**
 * `r_e + λ_a r_a + λ_s r_s`, with the feedback term negated when a cycle was detected.
 */
double fresh_shaped_reward(double r_e,
                           uint8_t r_a,
                           uint8_t r_s,
                           double lambda_a,
                           double lambda_s,
                           bool cycle_detected);

/**
 * Runs a full training run from a TOML configuration (an empty string
 * means all defaults). Artifacts go to `out_dir` unless it is null. The
 * final greedy evaluation mean is written to `final_return` (NaN when the
 * run evaluates nothing).
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string, `out_dir` null or a
 * NUL-terminated string, and `final_return` a valid pointer.
 */
enum FreshStatus fresh_train_run(const char *config_toml,
                                 const char *out_dir,
                                 double *final_return);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRESH_H */
