#ifndef CI_WAVEFORM_H
#define CI_WAVEFORM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CiStatus {
  CI_STATUS_OK = 0,
  CI_STATUS_NULL_POINTER = 1,
  CI_STATUS_INVALID_ARGUMENT = 2,
  CI_STATUS_ILL_CONDITIONED = 3,
  CI_STATUS_NOT_CONVERGED = 4,
  CI_STATUS_SOLVER_FAILURE = 5,
  CI_STATUS_BUFFER_TOO_SMALL = 6,
  CI_STATUS_PANIC = 7,
} CiStatus;

typedef enum CiMethod {
  CI_METHOD_ADMM = 0,
  CI_METHOD_QP_REFERENCE = 1,
  CI_METHOD_EPIGRAPH = 2,
} CiMethod;

/**
 * Opaque `K × N_T` channel.
 */
typedef struct CiChannel CiChannel;

/**
 * Opaque solved block.
 */
typedef struct CiSolution CiSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failure on this thread into `buf`,
 * truncated and NUL-terminated. Returns the full message length without the
 * terminator, or 0 when nothing has failed yet.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t ci_last_error(char *buf, size_t cap);

/**
 * Draws an i.i.d. CN(0, 1) channel with `k` users and `n_t` antennas.
 *
 * # Safety
 * `out` must be null or valid for a pointer write.
 */
enum CiStatus ci_channel_rayleigh(size_t n_t, size_t k, uint64_t seed, struct CiChannel **out);

/**
 * Wraps an explicit channel given as row-major `k × n_t` real and imaginary parts.
 *
 * # Safety
 * `re` and `im` must point to `k * n_t` doubles; `out` must be valid for a write.
 */
enum CiStatus ci_channel_new(size_t k,
                             size_t n_t,
                             const double *re,
                             const double *im,
                             struct CiChannel **out);

/**
 * # Safety
 * `ch` must be null or a handle from a `ci_channel_*` constructor, freed once.
 */
void ci_channel_free(struct CiChannel *ch);

/**
 * Writes the user count and antenna count of `ch`.
 *
 * # Safety
 * `ch` must be a live handle; `k` and `n_t` must be valid for writes.
 */
enum CiStatus ci_channel_dims(const struct CiChannel *ch, size_t *k, size_t *n_t);

/**
 * Designs the block waveform for `n` slots of symbols given as constellation
 * indices, column-major `K × N` (slot `j` occupies `indices[j*K .. j*K + K]`).
 * `qam` selects square QAM of the given order, otherwise PSK. `p0` is the
 * per-slot average power.
 *
 * # Safety
 * `ch` must be a live handle, `indices` must point to `K * n` entries and
 * `out` must be valid for a write.
 */
enum CiStatus ci_solve_block(const struct CiChannel *ch,
                             size_t order,
                             bool qam,
                             const size_t *indices,
                             size_t n,
                             double p0,
                             enum CiMethod method,
                             struct CiSolution **out);

/**
 * # Safety
 * `sol` must be null or a handle from [`ci_solve_block`], freed once.
 */
void ci_solution_free(struct CiSolution *sol);

/**
 * Smallest margin achieved by the waveform, NaN for a null handle.
 *
 * # Safety
 * `sol` must be null or a live handle.
 */
double ci_solution_t_star(const struct CiSolution *sol);

/**
 * Solver iteration count, 0 for a null handle.
 *
 * # Safety
 * `sol` must be null or a live handle.
 */
size_t ci_solution_iterations(const struct CiSolution *sol);

/**
 * Whether the solver converged and the constraints hold to tolerance.
 *
 * # Safety
 * `sol` must be null or a live handle.
 */
bool ci_solution_valid(const struct CiSolution *sol);

/**
 * Copies the `N_T × N` waveform as row-major real and imaginary parts.
 * `len` is the capacity of each array; on `CI_STATUS_BUFFER_TOO_SMALL`
 * nothing is written. `rows` and `cols` may be null.
 *
 * # Safety
 * `sol` must be a live handle and `re`, `im` must hold `len` doubles.
 */
enum CiStatus ci_solution_waveform(const struct CiSolution *sol,
                                   double *re,
                                   double *im,
                                   size_t len,
                                   size_t *rows,
                                   size_t *cols);

/**
 * Euclidean projection of `q` onto the probability simplex, written to `z`.
 *
 * # Safety
 * `q` and `z` must each hold `len` doubles; they may alias.
 */
enum CiStatus ci_project_simplex(const double *q, double *z, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CI_WAVEFORM_H */
