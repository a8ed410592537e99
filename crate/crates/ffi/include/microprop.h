#ifndef MICROPROP_H
#define MICROPROP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum MpStatus {
  MP_STATUS_OK = 0,
  MP_STATUS_NULL_POINTER = 1,
  /**
   * Malformed input: bad JSON, wrong lengths, violated preconditions.
   */
  MP_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input outside the domain of the operation (e.g. a trapped start).
   */
  MP_STATUS_DOMAIN = 3,
  /**
   * Query outside a validity window.
   */
  MP_STATUS_RANGE = 4,
  MP_STATUS_UNSUPPORTED = 5,
  /**
   * Integration, convergence or boundary failure.
   */
  MP_STATUS_NUMERICAL = 6,
  MP_STATUS_IO = 7,
  MP_STATUS_PANIC = 8,
} MpStatus;

/**
 * Hamilton-Jacobi solution `W(t, xi)` on `[t0, 0]`.
 */
typedef struct MpHj MpHj;

/**
 * Hamiltonian built from a JSON descriptor.
 */
typedef struct MpSpec MpSpec;

/**
 * One-dimensional grid wavefunction.
 */
typedef struct MpWave MpWave;

/**
 * Library version, a static NUL-terminated string.
 */
const char *mp_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *mp_last_error_message(void);

void mp_clear_error(void);

/**
 * Builds a spec from a JSON descriptor such as
 * `{"family":"long_range","dim":1,"c":0.5,"mu":0.8}`.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum MpStatus mp_spec_from_json(const char *json, struct MpSpec **out);

/**
 * # Safety
 * `spec` must come from `mp_spec_from_json` and not be freed twice.
 */
void mp_spec_free(struct MpSpec *spec);

/**
 * # Safety
 * `spec` must be a live handle or NULL (then 0 is returned).
 */
size_t mp_spec_dim(const struct MpSpec *spec);

/**
 * `k(x, xi) = a(x)(xi, xi) / 2`.
 *
 * # Safety
 * `x` and `xi` must hold `n` doubles.
 */
enum MpStatus mp_eval_kinetic(const struct MpSpec *spec,
                              const double *x,
                              const double *xi,
                              size_t n,
                              double *out);

/**
 * `k(x, xi) + V(x)`.
 *
 * # Safety
 * As [`mp_eval_kinetic`].
 */
enum MpStatus mp_eval_total(const struct MpSpec *spec,
                            const double *x,
                            const double *xi,
                            size_t n,
                            double *out);

/**
 * Endpoint of the full Hamilton flow from `(x, xi)` at time 0 to time `t`,
 * with the running action and the relative energy drift.
 *
 * # Safety
 * `x`, `xi`, `x_out`, `xi_out` must hold `n` doubles; `action` and `drift`
 * may be NULL.
 */
enum MpStatus mp_flow(const struct MpSpec *spec,
                      const double *x,
                      const double *xi,
                      size_t n,
                      double t,
                      double *x_out,
                      double *xi_out,
                      double *action,
                      double *drift);

/**
 * Hamilton-Jacobi solution on `[t0, 0]`. With `r > 0` the anchor radius and
 * gluing constant are taken as given; otherwise both are calibrated.
 *
 * # Safety
 * `spec` must be live; `out` writable.
 */
enum MpStatus mp_hj_new(const struct MpSpec *spec,
                        double r,
                        double c4,
                        double t0,
                        struct MpHj **out);

/**
 * # Safety
 * `hj` must come from `mp_hj_new` and not be freed twice.
 */
void mp_hj_free(struct MpHj *hj);

/**
 * Anchor radius `R` and gluing constant `c4`.
 *
 * # Safety
 * `hj` must be live; outputs writable.
 */
enum MpStatus mp_hj_params(const struct MpHj *hj, double *r, double *c4);

/**
 * `W(t, xi)`, `d_xi W` (into `grad`, `n` doubles) and `d_t W`. `grad` and
 * `dt` may be NULL.
 *
 * # Safety
 * `xi` must hold `n` doubles, `grad` too when given.
 */
enum MpStatus mp_hj_eval(const struct MpHj *hj,
                         double t,
                         const double *xi,
                         size_t n,
                         double *w,
                         double *grad,
                         double *dt);

/**
 * Scattering data `(z_-, xi_-)` of a backward nontrapping start, from a
 * lambda ladder of `rungs` scales at time `t0`. `error` (may be NULL)
 * receives the extrapolation error estimate.
 *
 * # Safety
 * `x`, `xi`, `z_out`, `xi_out` must hold `n` doubles.
 */
enum MpStatus mp_scatter(const struct MpHj *hj,
                         const double *x,
                         const double *xi,
                         size_t n,
                         double t0,
                         size_t rungs,
                         double *z_out,
                         double *xi_out,
                         double *error);

/**
 * Normalized Gaussian `exp(-(x - x0)^2 / 2s^2 + i k0 x)` on `n` points of
 * the periodic box `[-l, l)`; `n` must be a power of two.
 *
 * # Safety
 * `out` must be writable.
 */
enum MpStatus mp_wave_gaussian(size_t n,
                               double l,
                               double x0,
                               double k0,
                               double s,
                               struct MpWave **out);

/**
 * # Safety
 * `wave` must come from this library and not be freed twice.
 */
void mp_wave_free(struct MpWave *wave);

/**
 * Number of grid points, or 0 for NULL.
 *
 * # Safety
 * `wave` must be live or NULL.
 */
size_t mp_wave_len(const struct MpWave *wave);

/**
 * Discrete L2 norm.
 *
 * # Safety
 * `wave` must be live; `out` writable.
 */
enum MpStatus mp_wave_norm(const struct MpWave *wave, double *out);

/**
 * Copies the samples as interleaved `(re, im)` pairs; `len` must be twice
 * the grid size.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum MpStatus mp_wave_samples(const struct MpWave *wave, double *out, size_t len);

/**
 * `e^{-itH} u` as a new handle.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum MpStatus mp_wave_propagate(const struct MpSpec *spec,
                                const struct MpWave *wave,
                                double t,
                                struct MpWave **out);

/**
 * `Omega(t) u = e^{iW(t, D)} e^{-itH} u` for `t` in the HJ time range.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum MpStatus mp_wave_modified(const struct MpHj *hj,
                               const struct MpWave *wave,
                               double t,
                               struct MpWave **out);

#endif  /* MICROPROP_H */
