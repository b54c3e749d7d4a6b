#ifndef LANDSCAPE_H
#define LANDSCAPE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_CONFIG = 2,
  LS_STATUS_INGEST = 3,
  LS_STATUS_NUMERIC = 4,
  LS_STATUS_FORMAT = 5,
  LS_STATUS_NOT_FOUND = 6,
  LS_STATUS_IO = 7,
  LS_STATUS_BUFFER_TOO_SMALL = 8,
  LS_STATUS_PANIC = 9,
} LsStatus;

/**
 * Images in `[0, 1]` with integer labels.
 */
typedef struct LsDataset LsDataset;

/**
 * Network architecture plus parameters.
 */
typedef struct LsNetwork LsNetwork;

/**
 * Converged records of an annealing run, with their parameters.
 */
typedef struct LsTrajectory LsTrajectory;

/**
 * Annealing options; zero or negative values select the defaults noted per field.
 */
typedef struct LsAnnealOptions {
  /**
   * Default 1e-6.
   */
  double beta0;
  /**
   * Default 1.
   */
  double beta_max;
  /**
   * Geometric factor; default 1.15.
   */
  double factor;
  /**
   * Default 0.0015.
   */
  double lr;
  /**
   * Default 64.
   */
  size_t batch_size;
  /**
   * Default 5.
   */
  size_t patience;
  /**
   * Default 500.
   */
  size_t max_epochs;
  /**
   * Default 1e-2 times the norm of the start parameters.
   */
  double epsilon_dist;
  uint64_t seed;
} LsAnnealOptions;

/**
 * One converged point of a trajectory.
 */
typedef struct LsRecord {
  double beta;
  double error_train;
  double error_test;
  double loss;
  double r0;
  double r_ref;
  double acc_overall;
  size_t epochs_used;
} LsRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL.
 */
size_t ls_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ls_version(void);

/**
 * New network with `n_layers` sizes (input first), initialized from `seed`.
 */
enum LsStatus ls_network_new(const size_t *layer_sizes,
                             size_t n_layers,
                             uint64_t seed,
                             struct LsNetwork **out);

void ls_network_free(struct LsNetwork *net);

/**
 * Number of parameters, or 0 for a null handle.
 */
size_t ls_network_parameter_count(const struct LsNetwork *net);

enum LsStatus ls_network_get_params(const struct LsNetwork *net, double *out, size_t len);

enum LsStatus ls_network_set_params(struct LsNetwork *net, const double *params, size_t len);

/**
 * Dataset from `n` row-major images of `dim` pixels and `n` labels.
 */
enum LsStatus ls_dataset_new(const double *images,
                             const uint32_t *labels,
                             size_t n,
                             size_t dim,
                             struct LsDataset **out);

/**
 * Dataset from an IDX image file and an IDX label file.
 */
enum LsStatus ls_dataset_load_idx(const char *images_path,
                                  const char *labels_path,
                                  struct LsDataset **out);

void ls_dataset_free(struct LsDataset *data);

size_t ls_dataset_len(const struct LsDataset *data);

/**
 * Mean cross-entropy of `net` on `data`.
 */
enum LsStatus ls_error(const struct LsNetwork *net, const struct LsDataset *data, double *out);

/**
 * Error and its gradient; `grad` must hold `ls_network_parameter_count` values.
 * `error_out` may be null.
 */
enum LsStatus ls_gradient(const struct LsNetwork *net,
                          const struct LsDataset *data,
                          double *grad,
                          size_t len,
                          double *error_out);

/**
 * Exact Hessian-vector product of the error on all of `data`.
 */
enum LsStatus ls_hvp(const struct LsNetwork *net,
                     const struct LsDataset *data,
                     const double *v,
                     double *out,
                     size_t len);

/**
 * `−grad·(params − theta_ref) / (2‖params − theta_ref‖²)`.
 */
enum LsStatus ls_critical_beta(const double *grad,
                               const double *params,
                               const double *theta_ref,
                               size_t len,
                               double *out);

/**
 * Anneals `net`'s parameters toward `theta_ref` (the origin when null) on a
 * geometric schedule. `test` may be null, in which case `train` is used for both.
 */
enum LsStatus ls_anneal(const struct LsNetwork *net,
                        const struct LsDataset *train,
                        const struct LsDataset *test,
                        const double *theta_ref,
                        size_t theta_ref_len,
                        const struct LsAnnealOptions *options,
                        struct LsTrajectory **out);

void ls_trajectory_free(struct LsTrajectory *traj);

size_t ls_trajectory_len(const struct LsTrajectory *traj);

enum LsStatus ls_trajectory_record(const struct LsTrajectory *traj,
                                   size_t index,
                                   struct LsRecord *out);

/**
 * Parameters of record `index`; `out` must hold the network's parameter count.
 */
enum LsStatus ls_trajectory_params(const struct LsTrajectory *traj,
                                   size_t index,
                                   double *out,
                                   size_t len);

/**
 * Number of transitions found with the default detector.
 */
enum LsStatus ls_trajectory_transition_count(const struct LsTrajectory *traj, size_t *out);

enum LsStatus ls_trajectory_write_csv(const struct LsTrajectory *traj, const char *path);

/**
 * Global minimizer of the default toy loss `1 − exp(−(θ−2)²) + β(θ − θ_ref)²`.
 * Any of the output pointers may be null.
 */
enum LsStatus ls_toy_minimizer(double beta,
                               double theta_ref,
                               double *theta,
                               double *loss,
                               double *error);

/**
 * Equal-loss strength of the default toy model inside `[beta_lo, beta_hi]`.
 */
enum LsStatus ls_toy_equal_loss_beta(double theta_ref, double beta_lo, double beta_hi, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANDSCAPE_H */
