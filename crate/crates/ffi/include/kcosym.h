/* C interface to the kcosym field-theory toolkit. Generated; do not edit. */

#ifndef KCOSYM_H
#define KCOSYM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a call across the C boundary.
typedef enum KcStatus {
  // The call succeeded.
  KC_STATUS_OK = 0,
  // A required pointer argument was null.
  KC_STATUS_NULL_POINTER = 1,
  // An argument or configuration was rejected; see the error message.
  KC_STATUS_INVALID_ARGUMENT = 2,
  // The requested time step violates the stability bound.
  KC_STATUS_UNSTABLE = 3,
  // A matrix was singular or lacked the required definiteness.
  KC_STATUS_SINGULAR = 4,
  // A file could not be read or written.
  KC_STATUS_IO = 5,
  // An internal invariant failed; see the error message.
  KC_STATUS_PANIC = 6,
} KcStatus;

// An integrated wave field on its grid.  Opaque; release with
// [`kc_wave_solution_free`].
typedef struct KcWaveSolution KcWaveSolution;

// One axis of the integration grid.
typedef struct KcAxisSpec {
  // Coordinate of the first node.
  double start;
  // End of the axis range.  Periodic axes cover [start, stop) and wrap;
  // bounded axes include both endpoints.
  double stop;
  // Number of nodes (at least 3).
  size_t nodes;
  // Nonzero for a periodic axis, zero for held (Dirichlet) boundaries.
  bool periodic;
} KcAxisSpec;

// Scalar callback over base coordinates: receives `num_coords` doubles and
// the opaque `user_data` pointer passed to the solver.  May be null where a
// default is documented.
typedef double (*KcScalarFn)(const double *coords, size_t num_coords, void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the library as a static nul-terminated string.
const char *kc_version(void);

// Static name of a status code (e.g. "ok", "unstable").
const char *kc_status_name(enum KcStatus status);

// Message of the last failure on this thread, or null when the last call
// succeeded.  The pointer stays valid until the next failing call on the
// same thread.
const char *kc_last_error_message(void);

// Writes the solution-kernel dimension for `k` base directions and `n`
// field components into `out_dimension`.  The numerical rank computation
// uses tolerance 1e-9 and always matches the closed form (k-1)(kn+n).
//
// # Safety
// `out_dimension` must be null or valid for writing one `size_t`.
enum KcStatus kc_kernel_dimension(size_t k, size_t n, size_t *out_dimension);

// Integrates the wave system sigma d^2 psi/dt^2 = tau laplacian(psi).
//
// `axes` describes the grid: axis 0 is the evolution direction and must not
// be periodic; the remaining `num_axes - 1` axes are spatial (1 to 3 of
// them).  `displacement` and `velocity` give the initial field and its time
// derivative over the spatial coordinates; passing null selects the plane
// profile sin(x_1) with velocity -c cos(x_1), c = sqrt(tau/sigma).  On
// success `*out_solution` owns the integrated field.
//
// # Safety
// `axes` must be null or point to `num_axes` readable `KcAxisSpec` values,
// `out_solution` must be null or valid for writing one pointer, and any
// non-null callbacks must be safe to invoke with `user_data` for the
// duration of the call.
enum KcStatus kc_wave_solve(double sigma,
                            double tau,
                            const struct KcAxisSpec *axes,
                            size_t num_axes,
                            KcScalarFn displacement,
                            KcScalarFn velocity,
                            void *user_data,
                            struct KcWaveSolution **out_solution);

// Writes the total number of grid nodes into `out_count`.
//
// # Safety
// `solution` must be null or a live handle from [`kc_wave_solve`], and
// `out_count` must be null or valid for writing one `size_t`.
enum KcStatus kc_wave_solution_node_count(const struct KcWaveSolution *solution, size_t *out_count);

// Copies the field values in node order (evolution axis slowest) into
// `out_values`, which must hold exactly `capacity` doubles equal to the
// node count.
//
// # Safety
// `solution` must be null or a live handle from [`kc_wave_solve`], and
// `out_values` must be null or valid for writing `capacity` doubles.
enum KcStatus kc_wave_solution_copy_psi(const struct KcWaveSolution *solution,
                                        double *out_values,
                                        size_t capacity);

// Writes the maximum interior magnitude of the divergence of the momentum
// current (the discrete conservation defect) into `out_value`.
//
// # Safety
// `solution` must be null or a live handle from [`kc_wave_solve`], and
// `out_value` must be null or valid for writing one double.
enum KcStatus kc_wave_solution_max_divergence(const struct KcWaveSolution *solution,
                                              double *out_value);

// Writes the maximum interior magnitudes of the first-order field-equation
// residuals: the force (momentum-evolution) part into `out_force` and the
// velocity (constitutive) part into `out_velocity`.
//
// # Safety
// `solution` must be null or a live handle from [`kc_wave_solve`], and each
// out pointer must be null or valid for writing one double.
enum KcStatus kc_wave_solution_hdw_residual(const struct KcWaveSolution *solution,
                                            double *out_force,
                                            double *out_velocity);

// Writes the field and its momenta to `path` as CSV (one row per node:
// coordinates, field components, momenta).
//
// # Safety
// `solution` must be null or a live handle from [`kc_wave_solve`], and
// `path` must be null or a nul-terminated string.
enum KcStatus kc_wave_solution_write_csv(const struct KcWaveSolution *solution, const char *path);

// Releases a solution handle.  Null is accepted and ignored.
//
// # Safety
// `solution` must be null or a handle from [`kc_wave_solve`] that has not
// already been freed.
void kc_wave_solution_free(struct KcWaveSolution *solution);

// Runs the symmetry check for the lifted configuration translation on the
// wave system and writes the largest of the three condition residuals into
// `out_residual` (expected to be at rounding level).  Sampling uses
// `samples` points drawn deterministically from `seed`.
//
// # Safety
// `out_residual` must be null or valid for writing one double.
enum KcStatus kc_noether_translation_residual(double sigma,
                                              double tau,
                                              size_t spatial_dims,
                                              size_t samples,
                                              uint64_t seed,
                                              double *out_residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KCOSYM_H */
