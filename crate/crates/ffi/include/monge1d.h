#ifndef MONGE1D_H
#define MONGE1D_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum Monge1dStatus {
  MONGE1D_STATUS_OK = 0,
  MONGE1D_STATUS_NULL_POINTER = 1,
  MONGE1D_STATUS_INVALID_UTF8 = 2,
  MONGE1D_STATUS_PARSE_ERROR = 3,
  MONGE1D_STATUS_INVALID_INSTANCE = 4,
  MONGE1D_STATUS_LIMIT_PLAN_ERROR = 5,
  MONGE1D_STATUS_SOLVER_ERROR = 6,
  MONGE1D_STATUS_BUFFER_TOO_SMALL = 7,
  MONGE1D_STATUS_PANIC = 8,
} Monge1dStatus;

// A pair of measures `(mu, nu)`.
typedef struct Monge1dInstance Monge1dInstance;

// Entropic plan on a uniform grid.
typedef struct Monge1dSolution Monge1dSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. Owned by the library.
const char *monge1d_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *monge1d_version(void);

// Parses an instance file (`{"mu": ..., "nu": ..., "label": ...}`).
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum Monge1dStatus monge1d_instance_from_json(const char *json, struct Monge1dInstance **out);

// Builds an instance from breakpoints (`len + 1` each) and densities
// (`len` each). Densities are normalized to unit mass when `normalize` is
// nonzero; otherwise the mass must already be 1.
//
// # Safety
// Each array must hold the stated number of doubles; `out` must be writable.
enum Monge1dStatus monge1d_instance_from_piecewise(const double *mu_breakpoints,
                                                   const double *mu_densities,
                                                   size_t mu_len,
                                                   const double *nu_breakpoints,
                                                   const double *nu_densities,
                                                   size_t nu_len,
                                                   int32_t normalize,
                                                   struct Monge1dInstance **out);

// # Safety
// `inst` must come from a constructor above and not be freed twice.
void monge1d_instance_free(struct Monge1dInstance *inst);

// Wasserstein-1 distance.
//
// # Safety
// `inst` must be a live handle; `out` must be writable.
enum Monge1dStatus monge1d_w1(const struct Monge1dInstance *inst, double *out);

// Mass of `mu` on the set where the two CDFs agree.
//
// # Safety
// `inst` must be a live handle; `out` must be writable.
enum Monge1dStatus monge1d_zero_mass(const struct Monge1dInstance *inst, double *out);

// Minimum of the limit functional, i.e. the relative entropy of the
// selected optimal plan with the diagonal term.
//
// # Safety
// `inst` must be a live handle; `out` must be writable.
enum Monge1dStatus monge1d_min_f(const struct Monge1dInstance *inst, double *out);

// Full analysis report as JSON. Free the string with
// [`monge1d_string_free`].
//
// # Safety
// `inst` must be a live handle; `out` must be writable.
enum Monge1dStatus monge1d_analyze_json(const struct Monge1dInstance *inst, char **out);

// # Safety
// `s` must come from this library and not be freed twice.
void monge1d_string_free(char *s);

// Entropic plan at `eps` on an `n`-cell grid over the common hull.
//
// # Safety
// `inst` must be a live handle; `out` must be writable.
enum Monge1dStatus monge1d_sinkhorn(const struct Monge1dInstance *inst,
                                    double eps,
                                    size_t n,
                                    double tol,
                                    size_t max_iter,
                                    struct Monge1dSolution **out);

// # Safety
// `sol` must come from [`monge1d_sinkhorn`] and not be freed twice.
void monge1d_solution_free(struct Monge1dSolution *sol);

// Grid size; 0 for a null handle.
//
// # Safety
// `sol` must be NULL or a live handle.
size_t monge1d_solution_n(const struct Monge1dSolution *sol);

// `<C, P> + eps KL(P | a (x) b)`; NaN for a null handle.
//
// # Safety
// `sol` must be NULL or a live handle.
double monge1d_solution_j_eps(const struct Monge1dSolution *sol);

// 1 if the marginal residual reached the tolerance, else 0.
//
// # Safety
// `sol` must be NULL or a live handle.
int32_t monge1d_solution_converged(const struct Monge1dSolution *sol);

// Copies the plan row-major into `buf`, which must hold `n * n` doubles.
//
// # Safety
// `sol` must be a live handle; `buf` must hold `len` doubles.
enum Monge1dStatus monge1d_solution_plan(const struct Monge1dSolution *sol,
                                         double *buf,
                                         size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MONGE1D_H */
