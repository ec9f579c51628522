#ifndef PCP_H
#define PCP_H

/* Generated by cbindgen from the pcp-ffi crate. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcpStatus {
  PCP_STATUS_OK = 0,
  PCP_STATUS_NULL_POINTER = 1,
  PCP_STATUS_INVALID_ARGUMENT = 2,
  PCP_STATUS_SHAPE_MISMATCH = 3,
  PCP_STATUS_NOT_A_COUNT = 4,
  PCP_STATUS_NON_POSITIVE = 5,
  PCP_STATUS_ZERO_MARGINAL = 6,
  PCP_STATUS_ORDER_CAP = 7,
  PCP_STATUS_NUMERICAL = 8,
  PCP_STATUS_BUFFER_TOO_SMALL = 9,
  PCP_STATUS_PANIC = 10,
} PcpStatus;

typedef enum PcpSchedule {
  PCP_SCHEDULE_ECM = 0,
  PCP_SCHEDULE_MCECM = 1,
} PcpSchedule;

/**
 * Fisher information matrix.
 */
typedef struct PcpFisher PcpFisher;

/**
 * Kruskal (CP) model.
 */
typedef struct PcpModel PcpModel;

/**
 * Dense count or mean tensor.
 */
typedef struct PcpTensor PcpTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *pcp_last_error(void);

/**
 * Creates a tensor from `dims` and `len = Π dims` values in natural order
 * (first index fastest).
 *
 * # Safety
 * `dims` must point to `ndims` values and `data` to `len` values.
 */
enum PcpStatus pcp_tensor_new(const size_t *dims,
                              size_t ndims,
                              const double *data,
                              size_t len,
                              struct PcpTensor **out);

/**
 * # Safety
 * `t` must be null or a handle from this library, not yet freed.
 */
void pcp_tensor_free(struct PcpTensor *t);

/**
 * Number of entries, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
size_t pcp_tensor_len(const struct PcpTensor *t);

/**
 * # Safety
 * `t` must be a live handle and `out` must hold `len` values.
 */
enum PcpStatus pcp_tensor_copy_data(const struct PcpTensor *t, double *out, size_t len);

/**
 * Creates a model from its packed parameter vector: each factor `A_p`
 * (`dims[p] × rank`) stored column-major, factors concatenated in mode order.
 *
 * # Safety
 * `dims` must point to `ndims` values and `theta` to `len` values.
 */
enum PcpStatus pcp_model_new(const size_t *dims,
                             size_t ndims,
                             size_t rank,
                             const double *theta,
                             size_t len,
                             struct PcpModel **out);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
void pcp_model_free(struct PcpModel *m);

/**
 * Length of the packed parameter vector, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t pcp_model_num_params(const struct PcpModel *m);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
size_t pcp_model_rank(const struct PcpModel *m);

/**
 * # Safety
 * `m` must be a live handle and `out` must hold `len` values.
 */
enum PcpStatus pcp_model_pack(const struct PcpModel *m, double *out, size_t len);

/**
 * Mean tensor `M` of the model.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum PcpStatus pcp_model_full_tensor(const struct PcpModel *m, struct PcpTensor **out);

/**
 * Synthetic model with `order` modes of size `n`, simplex factors and mean
 * entry `mean`.
 *
 * # Safety
 * `out` must be writable.
 */
enum PcpStatus pcp_generate_model(size_t n,
                                  size_t order,
                                  size_t rank,
                                  double mean,
                                  uint64_t seed,
                                  struct PcpModel **out);

/**
 * Poisson counts drawn from the model's mean tensor.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum PcpStatus pcp_sample(const struct PcpModel *m, uint64_t seed, struct PcpTensor **out);

/**
 * # Safety
 * `x`, `m` must be live handles; `out` must be writable.
 */
enum PcpStatus pcp_loglik(const struct PcpTensor *x, const struct PcpModel *m, double *out);

/**
 * Score vector in packed parameter order.
 *
 * # Safety
 * `x`, `m` must be live handles and `out` must hold `len` values.
 */
enum PcpStatus pcp_score(const struct PcpTensor *x,
                         const struct PcpModel *m,
                         double *out,
                         size_t len);

/**
 * Fits a rank-`rank` model by EM from a seeded random start. `converged`
 * (optional) receives 1 if the tolerance was reached, 0 otherwise.
 *
 * # Safety
 * `x` must be a live handle; `out` must be writable; `converged` may be null.
 */
enum PcpStatus pcp_fit(const struct PcpTensor *x,
                       size_t rank,
                       enum PcpSchedule schedule,
                       size_t inner_iters,
                       size_t max_iter,
                       double tol,
                       uint64_t seed,
                       struct PcpModel **out,
                       int32_t *converged);

/**
 * Closed-form rank-one MLE.
 *
 * # Safety
 * `x` must be a live handle; `out` must be writable.
 */
enum PcpStatus pcp_mle_rank1(const struct PcpTensor *x, struct PcpModel **out);

/**
 * Fisher information: observed at `x`, or expected when `x` is null.
 *
 * # Safety
 * `m` must be a live handle, `x` null or a live handle; `out` writable.
 */
enum PcpStatus pcp_fim(const struct PcpModel *m, const struct PcpTensor *x, struct PcpFisher **out);

/**
 * # Safety
 * `f` must be null or a live handle.
 */
void pcp_fisher_free(struct PcpFisher *f);

/**
 * Side length of the matrix, or 0 for a null handle.
 *
 * # Safety
 * `f` must be null or a live handle.
 */
size_t pcp_fisher_order(const struct PcpFisher *f);

/**
 * Copies the symmetric matrix (`order²` values).
 *
 * # Safety
 * `f` must be a live handle and `out` must hold `len` values.
 */
enum PcpStatus pcp_fisher_copy(const struct PcpFisher *f, double *out, size_t len);

/**
 * Numerical rank (eigenvalues above `λ_max·√ε`) and conjectured rank.
 *
 * # Safety
 * `f` must be a live handle; outputs must be writable.
 */
enum PcpStatus pcp_fisher_rank(const struct PcpFisher *f, size_t *numerical, size_t *conjectured);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCP_H */
