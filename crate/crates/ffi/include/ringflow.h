#ifndef RINGFLOW_H
#define RINGFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every fallible call.
typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  // Malformed config, parameters or buffer sizes.
  RF_STATUS_INVALID_ARGUMENT = 2,
  // Solver failure, gap collapse, step underflow and similar.
  RF_STATUS_NUMERICAL_FAILURE = 3,
  RF_STATUS_IO = 4,
  // A Rust panic was caught at the boundary.
  RF_STATUS_PANIC = 5,
} RfStatus;

// Parameters, force profile and solved equilibrium.
typedef struct RfSystem RfSystem;

// Sampled result of a full simulation.
typedef struct RfTrajectory RfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len - 1` bytes). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t rf_last_error_message(char *buf, uintptr_t len);

// Library version as a static NUL-terminated string.
const char *rf_version(void);

// Builds a system from an experiment config in JSON (the same document the
// command-line tool reads), solving the equilibrium and calibrating the
// friction offset as configured.
//
// # Safety
// `config_json` must be a valid NUL-terminated string and `out` a valid
// pointer to writable storage for one handle.
enum RfStatus rf_system_new(const char *config_json, struct RfSystem **out);

// Releases a system; null is ignored.
//
// # Safety
// `sys` must be null or a handle from [`rf_system_new`] not yet freed.
void rf_system_free(struct RfSystem *sys);

// Number of particles; 0 for a null handle.
//
// # Safety
// `sys` must be null or a live handle.
uintptr_t rf_system_particles(const struct RfSystem *sys);

// Effective force `w` and damping time `2M/A`.
//
// # Safety
// `sys` must be a live handle; the out pointers must be valid or null.
enum RfStatus rf_system_scales(const struct RfSystem *sys, double *w, double *t_damp);

// Writes the `N` equilibrium positions (frame of the force profile) to `out`.
//
// # Safety
// `sys` must be a live handle and `out` point to `len` writable doubles.
enum RfStatus rf_system_equilibrium(const struct RfSystem *sys, double *out, uintptr_t len);

// Relative L-infinity difference between the mode solution and the
// adaptive integration of the cut-off linear system.
//
// # Safety
// `sys` must be a live handle and `out` a valid pointer.
enum RfStatus rf_linear_check(const struct RfSystem *sys,
                              double horizon,
                              uintptr_t steps,
                              double *out);

// Integrates the full model over `[0, horizon]` with `steps` exponential
// split steps, keeping about `samples` samples (0 for the default).
//
// # Safety
// `sys` must be a live handle and `out` valid storage for one handle.
enum RfStatus rf_simulate(const struct RfSystem *sys,
                          double horizon,
                          uintptr_t steps,
                          uintptr_t samples,
                          struct RfTrajectory **out);

// Releases a trajectory; null is ignored.
//
// # Safety
// `traj` must be null or a handle from [`rf_simulate`] not yet freed.
void rf_trajectory_free(struct RfTrajectory *traj);

// Number of stored samples; 0 for a null handle.
//
// # Safety
// `traj` must be null or a live handle.
uintptr_t rf_trajectory_samples(const struct RfTrajectory *traj);

// Time, unwrapped positions and velocities of sample `index`. Either array
// pointer may be null to skip it; non-null arrays must hold `len >= N` values.
//
// # Safety
// `traj` must be a live handle; non-null pointers must be valid for writes.
enum RfStatus rf_trajectory_sample(const struct RfTrajectory *traj,
                                   uintptr_t index,
                                   double *time,
                                   double *positions,
                                   double *velocities,
                                   uintptr_t len);

// `max |y_k(t)| / Delta`, `max |v_k(t) - V|` and whether the friction
// window was left.
//
// # Safety
// `traj` and `sys` must be live handles; out pointers valid or null.
enum RfStatus rf_trajectory_summary(const struct RfTrajectory *traj,
                                    const struct RfSystem *sys,
                                    double *y_over_delta,
                                    double *v_spread,
                                    bool *window_exit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RINGFLOW_H */
