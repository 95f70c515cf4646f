#ifndef WRANKSIM_H
#define WRANKSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Competition ranking: tied values share a rank.
#define WRS_TIE_COMPETITION 0

// Permutation ranking: ties broken by ascending index.
#define WRS_TIE_PERMUTATION 1

// Result code of every fallible call.
typedef enum WrsStatus {
  WRS_STATUS_OK = 0,
  WRS_STATUS_NULL_POINTER = 1,
  WRS_STATUS_INVALID_ARGUMENT = 2,
  WRS_STATUS_DOMAIN = 3,
  WRS_STATUS_SHAPE = 4,
  WRS_STATUS_SIZE = 5,
  WRS_STATUS_VALIDATION = 6,
  WRS_STATUS_PARSE = 7,
  WRS_STATUS_NUMERICAL = 8,
  WRS_STATUS_IO = 9,
  WRS_STATUS_SERDE = 10,
  WRS_STATUS_PANIC = 11,
} WrsStatus;

// Trained classifier loaded from a checkpoint.
typedef struct WrsModel WrsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *wrs_last_error(void);

// Library version as a static NUL-terminated string.
const char *wrs_version(void);

// Ranks `a` in descending order (largest value gets rank 1).
//
// # Safety
// `a` and `out_ranks` must point to `n` elements.
enum WrsStatus wrs_rank(const double *a, size_t n, int32_t tie_policy, uint32_t *out_ranks);

// Surrogate gradient of a loss through the rank function.
//
// # Safety
// `a`, `upstream` and `out_grad` must point to `n` elements.
enum WrsStatus wrs_blackbox_rank_grad(const double *a,
                                      const double *upstream,
                                      size_t n,
                                      double lambda,
                                      int32_t tie_policy,
                                      double *out_grad);

// Cosine similarity of two vectors of length `n`.
//
// # Safety
// `u` and `v` must point to `n` elements; `out` to one.
enum WrsStatus wrs_cosine_similarity(const double *u, const double *v, size_t n, double *out);

// W-RankSim loss of a `rows × cols` class weight matrix.
//
// `class_codes` lists the ordinal label of each row in increasing order;
// null means `1..=rows`. `out_grad` (optional) receives `rows × cols`.
//
// # Safety
// Pointers must reference the stated number of elements or be null where
// optional.
enum WrsStatus wrs_w_ranksim_loss(const double *w,
                                  size_t rows,
                                  size_t cols,
                                  const int64_t *class_codes,
                                  double lambda,
                                  int32_t tie_policy,
                                  double *out_loss,
                                  double *out_grad);

// Softmax cross-entropy of `logits` against class index `target`.
//
// # Safety
// `logits` must point to `n` elements, `out_grad` to `n` or be null.
enum WrsStatus wrs_cross_entropy(const double *logits,
                                 size_t n,
                                 size_t target,
                                 double *out_loss,
                                 double *out_grad);

// Large margin cosine loss of `features` (length `dim`) against the
// `classes × dim` weight matrix `w`.
//
// # Safety
// Pointers must reference the stated number of elements or be null where
// optional.
enum WrsStatus wrs_lmcl(const double *features,
                        size_t dim,
                        const double *w,
                        size_t classes,
                        size_t target,
                        double s,
                        double m,
                        double *out_loss,
                        double *out_grad_features,
                        double *out_grad_w);

// Loads a checkpoint file. On success `*out_model` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out_model` non-null.
enum WrsStatus wrs_model_load(const char *path, struct WrsModel **out_model);

// Parses a checkpoint from a NUL-terminated JSON string.
//
// # Safety
// `json` must be a NUL-terminated UTF-8 string; `out_model` non-null.
enum WrsStatus wrs_model_from_json(const char *json, struct WrsModel **out_model);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void wrs_model_free(struct WrsModel *model);

// Input feature dimension; 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t wrs_model_input_dim(const struct WrsModel *model);

// Number of classes; 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t wrs_model_num_classes(const struct WrsModel *model);

// Width of the final hidden representation; 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t wrs_model_embedding_dim(const struct WrsModel *model);

// Class scores of one sample under the model's scoring rule.
//
// # Safety
// `x` must point to `x_len` elements and `out_scores` to `out_len`.
enum WrsStatus wrs_model_scores(const struct WrsModel *model,
                                const double *x,
                                size_t x_len,
                                double *out_scores,
                                size_t out_len);

// Final hidden representation `z` of one sample.
//
// # Safety
// `x` must point to `x_len` elements and `out_z` to `out_len`.
enum WrsStatus wrs_model_embed(const struct WrsModel *model,
                               const double *x,
                               size_t x_len,
                               double *out_z,
                               size_t out_len);

// Predicted class index of one sample; ties go to the lower index.
//
// # Safety
// `x` must point to `x_len` elements; `out_class` non-null.
enum WrsStatus wrs_model_predict(const struct WrsModel *model,
                                 const double *x,
                                 size_t x_len,
                                 size_t *out_class);

// Predicted class indices of `n` samples stored row-major in `x`.
//
// # Safety
// `x` must point to `n × input_dim` elements and `out_classes` to `n`.
enum WrsStatus wrs_model_predict_batch(const struct WrsModel *model,
                                       const double *x,
                                       size_t n,
                                       size_t *out_classes);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WRANKSIM_H */
