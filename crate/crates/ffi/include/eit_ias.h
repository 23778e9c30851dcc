#ifndef EIT_IAS_H
#define EIT_IAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EitStatus {
  EIT_STATUS_OK = 0,
  EIT_STATUS_NULL_POINTER = 1,
  EIT_STATUS_CONFIG = 2,
  EIT_STATUS_PARSE = 3,
  EIT_STATUS_VALIDATION = 4,
  EIT_STATUS_DOMAIN = 5,
  EIT_STATUS_NUMERICAL = 6,
  EIT_STATUS_IO = 7,
  /**
   * An array argument has the wrong length.
   */
  EIT_STATUS_LENGTH = 8,
  /**
   * A Rust panic was caught at the boundary.
   */
  EIT_STATUS_PANIC = 9,
} EitStatus;

/**
 * Forward model with the injection and measurement schedule of one electrode level.
 */
typedef struct EitForward EitForward;

/**
 * Triangulated disk with electrodes and interior/boundary node labels.
 */
typedef struct EitMesh EitMesh;

/**
 * Two-phase schedule; obtain defaults from [`eit_schedule_default`].
 */
typedef struct EitSchedule {
  double eta1;
  double r2;
  double vartheta_star;
  size_t k_max1;
  size_t k_max2;
  double tol;
  size_t inner_linearizations;
} EitSchedule;

typedef struct EitReport {
  size_t iterations;
  /**
   * 0 for the primal normal equations, 1 for the adjoint route.
   */
  uint32_t route;
  double final_delta_theta;
  double seconds;
} EitReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a success. The pointer
 * stays valid until the next call into this library from the same thread.
 */
const char *eit_last_error(void);

/**
 * Unit-disk mesh with 32 electrodes in the challenge layout and target edge length `h`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum EitStatus eit_mesh_generate(double h, struct EitMesh **out);

/**
 * Reads a mesh in the text format written by the `eit-ias mesh` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as for [`eit_mesh_generate`].
 */
enum EitStatus eit_mesh_load(const char *path, struct EitMesh **out);

/**
 * # Safety
 * `mesh` must be null or a handle from this library that has not been freed.
 */
void eit_mesh_free(struct EitMesh *mesh);

/**
 * # Safety
 * `mesh` must be a live handle; `nodes`, `interior` and `electrodes` may each be null.
 */
enum EitStatus eit_mesh_sizes(const struct EitMesh *mesh,
                              size_t *nodes,
                              size_t *interior,
                              size_t *electrodes);

/**
 * Complete electrode model on `mesh` (copied) with background `sigma0`, one contact
 * impedance per electrode, and the schedule for `level` active electrodes
 * (32, 30, 28, 26, 24, 22 or 20) at current `amplitude`.
 *
 * # Safety
 * `mesh` must be live; `z` must point to `n_z` doubles; `out` as for [`eit_mesh_generate`].
 */
enum EitStatus eit_forward_new(const struct EitMesh *mesh,
                               double sigma0,
                               const double *z,
                               size_t n_z,
                               size_t level,
                               double amplitude,
                               struct EitForward **out);

/**
 * # Safety
 * `forward` must be null or a live handle.
 */
void eit_forward_free(struct EitForward *forward);

/**
 * Number of measurements `m` and of conductivity unknowns `n` (interior nodes).
 *
 * # Safety
 * `forward` must be live; `m` and `n` may be null.
 */
enum EitStatus eit_forward_sizes(const struct EitForward *forward, size_t *m, size_t *n);

/**
 * Predicted measurements at conductivity `sigma0 + xi`.
 *
 * # Safety
 * `xi` must hold `n` doubles and `data` must have room for `m`, with sizes from
 * [`eit_forward_sizes`].
 */
enum EitStatus eit_forward_eval(const struct EitForward *forward,
                                const double *xi,
                                size_t n,
                                double *data,
                                size_t m);

/**
 * Measurements and their Jacobian, written column-major into `jacobian` (`m * n` doubles).
 * `data` may be null when only the Jacobian is wanted.
 *
 * # Safety
 * As for [`eit_forward_eval`]; `jacobian` must have room for `m * n` doubles.
 */
enum EitStatus eit_forward_jacobian(const struct EitForward *forward,
                                    const double *xi,
                                    size_t n,
                                    double *data,
                                    size_t m,
                                    double *jacobian,
                                    size_t jacobian_len);

/**
 * Closed-form or Newton variance update `θ_j = argmin` of the per-increment Gibbs energy
 * for hyperprior exponent `r`, focality `eta` and scales `vartheta`.
 *
 * # Safety
 * `zeta`, `vartheta` and `theta` must each hold `n` doubles.
 */
enum EitStatus eit_theta_update(const double *zeta,
                                const double *vartheta,
                                size_t n,
                                double r,
                                double eta,
                                double *theta);

struct EitSchedule eit_schedule_default(void);

/**
 * Hybrid IAS reconstruction of `xi` from `data` with noise level `omega`.
 * `schedule` and `report` may be null; null selects the default schedule.
 *
 * # Safety
 * `data` must hold `m` and `xi` `n` doubles, with sizes from [`eit_forward_sizes`].
 */
enum EitStatus eit_reconstruct(const struct EitForward *forward,
                               const double *data,
                               size_t m,
                               double omega,
                               const struct EitSchedule *schedule,
                               double *xi,
                               size_t n,
                               struct EitReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EIT_IAS_H */
