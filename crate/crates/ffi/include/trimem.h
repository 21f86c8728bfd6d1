#ifndef TRIMEM_H
#define TRIMEM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TrimemStatus {
  TRIMEM_STATUS_OK = 0,
  TRIMEM_STATUS_CONFIG = 1,
  TRIMEM_STATUS_RUNTIME = 2,
  TRIMEM_STATUS_IO = 3,
  TRIMEM_STATUS_NULL_POINTER = 4,
  TRIMEM_STATUS_INVALID_ARGUMENT = 5,
  TRIMEM_STATUS_SHAPE = 6,
  TRIMEM_STATUS_NUMERIC = 7,
  TRIMEM_STATUS_CAPACITY = 8,
  TRIMEM_STATUS_FORMAT = 9,
  TRIMEM_STATUS_CORRUPTION = 10,
  TRIMEM_STATUS_PHASE = 11,
  TRIMEM_STATUS_BUFFER_TOO_SMALL = 12,
  TRIMEM_STATUS_PANIC = 13,
} TrimemStatus;

/**
 * Opaque system handle.
 */
typedef struct TrimemSystem TrimemSystem;

/**
 * Outcome of one inference.
 */
typedef struct TrimemTickResult {
  uint32_t prediction;
  uint32_t expert;
  bool success;
  bool microsleep_ran;
  /**
   * Synapses masked by the microsleep, 0 when none ran.
   */
  uint64_t deactivated;
  /**
   * The tick closed the day; fetch it with `trimem_last_day`.
   */
  bool night_ran;
} TrimemTickResult;

/**
 * Summary of a closed day.
 */
typedef struct TrimemDayReport {
  uint64_t day_index;
  uint64_t inferences;
  uint64_t successes;
  double accuracy;
  double novelty;
  uint64_t microsleeps;
  uint64_t deactivated;
  uint64_t pruned;
  uint64_t promoted;
  uint64_t graduated;
  uint64_t active_count;
  uint64_t stm;
  uint64_t ltm;
  uint64_t pm;
} TrimemDayReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *trimem_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call on the same thread.
 */
const char *trimem_last_error(void);

/**
 * Builds a system from configuration text (the same format the command
 * line reads; empty text means all defaults). The `[run] baseline` key
 * selects the regime. Stream and run settings are otherwise ignored.
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TrimemStatus trimem_system_new(const char *config,
                                    uint64_t seed,
                                    struct TrimemSystem **out_system);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `system` must come from this library and not be used afterwards.
 */
void trimem_system_free(struct TrimemSystem *system);

/**
 * One inference with learning. `feedback` is a 1-5 rating or NaN for none.
 *
 * # Safety
 * `system` must be a live handle, `context` NUL-terminated, `input` must
 * point at `input_len` doubles, and `result` may be null.
 */
enum TrimemStatus trimem_tick(struct TrimemSystem *system,
                              const char *context,
                              const double *input,
                              size_t input_len,
                              uint32_t target,
                              double feedback,
                              struct TrimemTickResult *result);

/**
 * Runs the nightly pass now, closing the current day, and writes its
 * summary to `report` (which may be null).
 *
 * # Safety
 * `system` must be a live handle.
 */
enum TrimemStatus trimem_end_day(struct TrimemSystem *system, struct TrimemDayReport *report);

/**
 * Summary of the most recently closed day.
 *
 * # Safety
 * `system` must be a live handle and `report` valid.
 */
enum TrimemStatus trimem_last_day(struct TrimemSystem *system, struct TrimemDayReport *report);

/**
 * Output logits for `input` without learning. `output` must hold at least
 * `trimem_output_dim` doubles; `output_cap` is its length.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum TrimemStatus trimem_predict(struct TrimemSystem *system,
                                 const char *context,
                                 const double *input,
                                 size_t input_len,
                                 double *output,
                                 size_t output_cap);

/**
 * Writes a checkpoint. Only allowed between days.
 *
 * # Safety
 * `system` must be a live handle and `path` NUL-terminated.
 */
enum TrimemStatus trimem_system_save(struct TrimemSystem *system, const char *path);

/**
 * Restores a system from a checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated and `out_system` valid.
 */
enum TrimemStatus trimem_system_load(const char *path, struct TrimemSystem **out_system);

/**
 * Active synapses over all experts; 0 for a null handle.
 *
 * # Safety
 * `system` must be null or a live handle.
 */
uint64_t trimem_active_count(const struct TrimemSystem *system);

/**
 * Index of the current day; 0 for a null handle.
 *
 * # Safety
 * `system` must be null or a live handle.
 */
uint64_t trimem_day_index(const struct TrimemSystem *system);

/**
 * Number of experts; 0 for a null handle.
 *
 * # Safety
 * `system` must be null or a live handle.
 */
uint64_t trimem_expert_count(const struct TrimemSystem *system);

/**
 * # Safety
 * `system` must be null or a live handle.
 */
uint64_t trimem_input_dim(const struct TrimemSystem *system);

/**
 * # Safety
 * `system` must be null or a live handle.
 */
uint64_t trimem_output_dim(const struct TrimemSystem *system);

/**
 * Checksum over weights, metadata, buffers and RNG position.
 *
 * # Safety
 * `system` must be null or a live handle.
 */
uint64_t trimem_checksum(const struct TrimemSystem *system);

/**
 * Forgetting from an `n_tasks` x `n_tasks` row-major accuracy matrix where
 * row `i` holds accuracies after training task `i` (entries above the
 * diagonal are ignored). Writes `n_tasks - 1` per-task values into
 * `per_task` (may be null) and the mean into `mean`.
 *
 * # Safety
 * `accuracy` must hold `n_tasks * n_tasks` doubles and `per_task`, when
 * non-null, `n_tasks - 1`.
 */
enum TrimemStatus trimem_forgetting(const double *accuracy,
                                    size_t n_tasks,
                                    double *per_task,
                                    double *mean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIMEM_H */
