#ifndef FSIBEAM_H
#define FSIBEAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status of an API call. Nonzero values describe what went wrong; the
 * numeric values of the first four match the command-line exit codes.
 */
typedef enum {
  /**
   * Success.
   */
  FSIBEAM_OK = 0,
  /**
   * The interface reached the configured contact floor; the state holds
   * the last computed step.
   */
  FSIBEAM_ERR_CONTACT = 2,
  /**
   * The per-step fixed-point iteration did not converge; the state is
   * unchanged.
   */
  FSIBEAM_ERR_PICARD = 3,
  /**
   * The configuration failed to parse or validate.
   */
  FSIBEAM_ERR_CONFIG = 4,
  /**
   * A required pointer argument was null.
   */
  FSIBEAM_ERR_NULL_ARGUMENT = 5,
  /**
   * A string argument was not valid UTF-8.
   */
  FSIBEAM_ERR_UTF8 = 6,
  /**
   * An internal failure (assembly, geometry, or a caught panic).
   */
  FSIBEAM_ERR_RUNTIME = 7,
  /**
   * A destination buffer was too small.
   */
  FSIBEAM_ERR_BUFFER_SIZE = 8,
} FsibeamStatus;

/**
 * An in-progress simulation. Create with [`fsibeam_sim_new`] or
 * [`fsibeam_sim_from_file`], destroy with [`fsibeam_sim_free`].
 */
typedef struct FsibeamSim FsibeamSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or an empty
 * string. The pointer stays valid until the next failing call on the same
 * thread; do not free it.
 */
const char *fsibeam_last_error_message(void);

/**
 * Create a simulation from a JSON configuration document.
 *
 * On success writes the new handle to `out` and returns `FSIBEAM_OK`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be a valid
 * pointer to a pointer slot.
 */
FsibeamStatus fsibeam_sim_new(const char *config_json, FsibeamSim **out);

/**
 * Create a simulation from a JSON configuration file on disk.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer to
 * a pointer slot.
 */
FsibeamStatus fsibeam_sim_from_file(const char *path, FsibeamSim **out);

/**
 * Destroy a handle. Passing null is a no-op.
 *
 * # Safety
 * `sim` must be a handle from a creation call that has not been freed.
 */
void fsibeam_sim_free(FsibeamSim *sim);

/**
 * Advance by a single implicit step of size `dt`.
 *
 * Returns `FSIBEAM_ERR_PICARD` (state unchanged) if the step's fixed-point
 * iteration misses its tolerance, and `FSIBEAM_ERR_CONTACT` once the
 * interface reaches the contact floor.
 *
 * # Safety
 * `sim` must be a live handle.
 */
FsibeamStatus fsibeam_sim_step(FsibeamSim *sim, double dt);

/**
 * Step with the configured `dt` until the simulation time reaches
 * `t_target`, stopping early on any failure. The final step is shortened
 * to land exactly on the target.
 *
 * # Safety
 * `sim` must be a live handle.
 */
FsibeamStatus fsibeam_sim_advance(FsibeamSim *sim, double t_target);

/**
 * Current simulation time.
 *
 * # Safety
 * `sim` must be a live handle.
 */
double fsibeam_sim_time(const FsibeamSim *sim);

/**
 * Smallest interface height over the quadrature nodes at the current state.
 *
 * # Safety
 * `sim` must be a live handle.
 */
double fsibeam_sim_min_height(const FsibeamSim *sim);

/**
 * Energy accounting at the current state. Any output pointer may be null
 * to skip that field. `balance` is the energy-balance residual
 * `E(t) + dissipated - E(0)`.
 *
 * # Safety
 * `sim` must be a live handle; non-null outputs must be writable.
 */
FsibeamStatus fsibeam_sim_energy(const FsibeamSim *sim,
                                 double *fluid,
                                 double *beam,
                                 double *elastic,
                                 double *dissipated,
                                 double *balance);

/**
 * Number of doubles in the packed state vector: the velocity coefficients,
 * then the interface mean, then the interface coefficients.
 *
 * # Safety
 * `sim` must be a live handle.
 */
size_t fsibeam_sim_state_len(const FsibeamSim *sim);

/**
 * Copy the packed state vector into `out`, which holds `len` doubles.
 * `len` must equal [`fsibeam_sim_state_len`].
 *
 * # Safety
 * `sim` must be a live handle; `out` must point to `len` writable doubles.
 */
FsibeamStatus fsibeam_sim_state(const FsibeamSim *sim, double *out, size_t len);

/**
 * Sample the interface height at `n` uniformly spaced points of `[0, L)`.
 *
 * # Safety
 * `sim` must be a live handle; `out` must point to `n` writable doubles.
 */
FsibeamStatus fsibeam_sim_height_profile(const FsibeamSim *sim, double *out, size_t n);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FSIBEAM_H */
