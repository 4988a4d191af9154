#ifndef PULLBACK_OPTIM_H
#define PULLBACK_OPTIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PO_OK 0

#define PO_NULL_POINTER 1

#define PO_DIMENSION 2

#define PO_DOMAIN 3

#define PO_NON_FINITE 4

#define PO_INVALID_CONFIG 5

#define PO_USAGE 6

#define PO_IO 7

#define PO_PANIC 8

/*
 Opaque optimizer handle.
 */
typedef struct PoOptimizer PoOptimizer;

/*
 Optimizer hyperparameters. Fill with `po_hyper_default` or
 `po_hyper_for_dimension` and adjust.
 */
typedef struct PoHyperParams {
  double eta;
  double mu;
  double xi;
  double beta;
  double lambda;
  double beta2;
  double epsilon;
} PoHyperParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next library call on this thread.
 */
const char *po_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *po_version(void);

/*
 Writes the default hyperparameters to `out`.

 # Safety
 `out` must be null or point to writable memory for one `PoHyperParams`.
 */
int32_t po_hyper_default(struct PoHyperParams *out);

/*
 Defaults with ξ = 1/n.

 # Safety
 `out` must be null or point to writable memory for one `PoHyperParams`.
 */
int32_t po_hyper_for_dimension(size_t n, struct PoHyperParams *out);

/*
 Creates an optimizer for `n` parameters. `kind` is one of `sgd`,
 `rms-prop`, `adam`, `adam-w`, `im-sgd`, `im-log-sgd`, `im-rms`.

 # Safety
 `kind` must be a NUL-terminated string, `hyper` must point to one
 `PoHyperParams` and `out` to writable storage for a handle pointer.
 */
int32_t po_optimizer_new(const char *kind,
                         const struct PoHyperParams *hyper,
                         size_t n,
                         struct PoOptimizer **out);

/*
 Releases a handle. Null is ignored.

 # Safety
 `opt` must be null or a handle from `po_optimizer_new` not yet freed.
 */
void po_optimizer_free(struct PoOptimizer *opt);

/*
 Applies one step: reads `theta` and `grad` (both length `n`), writes the
 new parameters back into `theta`. `loss` is required by `im-log-sgd`
 (positive) and ignored otherwise. `r_t_out` may be null. On failure
 `theta` and the optimizer state are left unchanged.

 # Safety
 `opt` must be a live handle; `theta` and `grad` must point to `n` doubles.
 */
int32_t po_optimizer_step(struct PoOptimizer *opt,
                          double *theta,
                          const double *grad,
                          size_t n,
                          double loss,
                          double *r_t_out);

/*
 Number of steps taken so far.

 # Safety
 `opt` must be a live handle and `out` writable.
 */
int32_t po_optimizer_steps(const struct PoOptimizer *opt, uint64_t *out);

/*
 Evaluates a named test landscape (`rosenbrock`, `rastrigin`,
 `himmelblau`, `beale`, `ackley`) at `theta`.

 # Safety
 `name` must be a NUL-terminated string, `theta` must point to `n` doubles
 and `out` must be writable.
 */
int32_t po_landscape_eval(const char *name, const double *theta, size_t n, double *out);

/*
 Gradient of a named landscape, written to `grad_out` (length `n`).

 # Safety
 `name` must be a NUL-terminated string; `theta` and `grad_out` must point
 to `n` doubles.
 */
int32_t po_landscape_grad(const char *name, const double *theta, size_t n, double *grad_out);

/*
 Single induced step `-η γ⁻¹g / (1 + ξ gᵀγ⁻¹g)` into `out`.
 `gamma_inv_diag` may be null for the Euclidean metric.

 # Safety
 `g` and `out` must point to `n` doubles; `gamma_inv_diag` to `n` doubles
 or null.
 */
int32_t po_induced_update_flat(const double *g,
                               const double *gamma_inv_diag,
                               size_t n,
                               double eta,
                               double xi,
                               double *out);

/*
 Single log-embedding step `-η L γ⁻¹g / (L² + ξ gᵀγ⁻¹g)` into `out`.

 # Safety
 As for `po_induced_update_flat`.
 */
int32_t po_induced_update_log(const double *g,
                              double loss,
                              const double *gamma_inv_diag,
                              size_t n,
                              double eta,
                              double xi,
                              double *out);

/*
 Runs one benchmark from a JSON run configuration and returns the record as
 a JSON string in `out_json`, to be released with `po_string_free`.

 # Safety
 `config_json` must be a NUL-terminated string and `out_json` writable.
 */
int32_t po_run_json(const char *config_json, char **out_json);

/*
 Releases a string returned by the library. Null is ignored.

 # Safety
 `s` must be null or a string from this library not yet freed.
 */
void po_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PULLBACK_OPTIM_H */
