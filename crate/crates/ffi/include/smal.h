#ifndef SMAL_H
#define SMAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Primitive motions, in wire order.
 */
typedef enum SmalAtom {
  SMAL_ATOM_FORWARD = 0,
  SMAL_ATOM_BACKWARD = 1,
  SMAL_ATOM_TURN_LEFT = 2,
  SMAL_ATOM_TURN_RIGHT = 3,
} SmalAtom;

typedef enum SmalStatus {
  SMAL_STATUS_OK = 0,
  SMAL_STATUS_NULL_POINTER = 1,
  SMAL_STATUS_INVALID_ARGUMENT = 2,
  SMAL_STATUS_IO = 3,
  SMAL_STATUS_CORRUPT = 4,
  SMAL_STATUS_VERSION_MISMATCH = 5,
  SMAL_STATUS_INVALID_MODEL = 6,
  SMAL_STATUS_WORLD_FORMAT = 7,
  SMAL_STATUS_NO_PATH = 8,
  SMAL_STATUS_NUMERIC = 9,
  SMAL_STATUS_INTERNAL = 10,
} SmalStatus;

/**
 * Trained model handle.
 */
typedef struct SmalModel SmalModel;

/**
 * Simulated world handle.
 */
typedef struct SmalWorld SmalWorld;

/**
 * Robot pose; `heading` is 0 = N, 1 = E, 2 = S, 3 = W.
 */
typedef struct SmalPose {
  size_t x;
  size_t y;
  uint32_t heading;
} SmalPose;

typedef struct SmalEpisode {
  bool success;
  size_t steps;
  size_t ticks;
  size_t collisions;
} SmalEpisode;

/**
 * Library version, a static NUL-terminated string.
 */
const char *smal_version(void);

/**
 * Message for the last failed call on this thread, or "" if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *smal_last_error(void);

/**
 * Loads a model file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SmalStatus smal_model_load(const char *path, struct SmalModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`smal_model_load`] and not be used afterwards.
 */
void smal_model_free(struct SmalModel *model);

/**
 * Number of learned states.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SmalStatus smal_model_num_states(const struct SmalModel *model, size_t *out);

/**
 * Number of learned actions.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SmalStatus smal_model_num_actions(const struct SmalModel *model, size_t *out);

/**
 * Frames per observation window.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SmalStatus smal_model_seq_len(const struct SmalModel *model, size_t *out);

/**
 * Identifies the state of a window of `frames` RGB8 images of
 * `width` x `height` pixels stored back to back in `rgb`.
 *
 * # Safety
 * `rgb` must point to `frames * width * height * 3` readable bytes.
 */
enum SmalStatus smal_model_identify(const struct SmalModel *model,
                                    const uint8_t *rgb,
                                    size_t width,
                                    size_t height,
                                    size_t frames,
                                    size_t *state_out);

/**
 * Loads a world file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SmalStatus smal_world_load(const char *path, struct SmalWorld **out);

/**
 * Parses world text into `*out`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SmalStatus smal_world_parse(const char *text, struct SmalWorld **out);

/**
 * Releases a world; null is ignored.
 *
 * # Safety
 * `world` must come from a world constructor and not be used afterwards.
 */
void smal_world_free(struct SmalWorld *world);

/**
 * Puts the robot back at the start pose and clears the counters.
 *
 * # Safety
 * `world` must be a live handle.
 */
enum SmalStatus smal_world_reset(struct SmalWorld *world);

/**
 * Applies one atom, a [`SmalAtom`] value.
 *
 * # Safety
 * `world` must be a live handle.
 */
enum SmalStatus smal_world_step(struct SmalWorld *world, uint32_t atom);

/**
 * Current robot pose.
 *
 * # Safety
 * `world` must be a live handle and `out` writable.
 */
enum SmalStatus smal_world_pose(const struct SmalWorld *world, struct SmalPose *out);

/**
 * Moves the start pose (and the robot) to `pose`.
 *
 * # Safety
 * `world` must be a live handle.
 */
enum SmalStatus smal_world_set_start(struct SmalWorld *world, struct SmalPose pose);

/**
 * Whether the robot stands on the victim cell.
 *
 * # Safety
 * `world` must be a live handle and `out` writable.
 */
enum SmalStatus smal_world_at_victim(const struct SmalWorld *world, bool *out);

/**
 * Runs the model's policy in `world` from its current pose for at most
 * `budget` ticks.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum SmalStatus smal_run_episode(const struct SmalModel *model,
                                 struct SmalWorld *world,
                                 size_t budget,
                                 struct SmalEpisode *out);

#endif  /* SMAL_H */
